//! Report files and the point-cache format.
//!
//! Point files are little-endian:
//!
//! ```text
//! magic     8 bytes  "SNISPTS1"
//! kind      u8       0 = pool, 1 = queries
//! dim       u64
//! len       u64
//! seed      u64
//! spec_len  u64
//! spec      spec_len bytes of UTF-8 JSON describing the generator
//! data      len * dim f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use snis_abc_core::{Method, Points};

use crate::error::{HarnessError, Result};
use crate::harness::{ReportKind, ScalingReport, Seeds, SlopeEntry};

pub const REPORT_HEADER: [&str; 8] = [
    "n",
    "method",
    "bias_corrected",
    "bias_naive",
    "total_variance",
    "mean_time_us",
    "clamped_count",
    "retries",
];

pub const BASELINES_HEADER: [&str; 6] = [
    "n",
    "method",
    "bias",
    "variance",
    "time_us",
    "samples_per_estimate",
];

const POINTS_MAGIC: &[u8; 8] = b"SNISPTS1";

#[derive(Serialize)]
struct ReportRecord {
    n: usize,
    method: Method,
    bias_corrected: f64,
    bias_naive: f64,
    total_variance: f64,
    mean_time_us: Option<f64>,
    clamped_count: usize,
    retries: u64,
}

#[derive(Serialize)]
struct BaselineRecord {
    n: usize,
    method: Method,
    bias: f64,
    variance: f64,
    time_us: Option<f64>,
    samples_per_estimate: usize,
}

#[derive(Serialize)]
struct QueryRecord {
    query: usize,
    n: usize,
    method: Method,
    bias_corrected: f64,
    bias_naive: f64,
    std_error: f64,
    total_variance: f64,
    clamped: bool,
    retries: u64,
    mean_time_us: Option<f64>,
    predicted_standard_bias: f64,
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out)
}

/// Query-averaged rows.
pub fn write_report_csv<W: Write>(report: &ScalingReport, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in &report.rows {
        w.serialize(ReportRecord {
            n: r.n,
            method: r.method,
            bias_corrected: r.bias_corrected,
            bias_naive: r.bias_naive,
            total_variance: r.total_variance,
            mean_time_us: r.mean_time_us,
            clamped_count: r.clamped_count,
            retries: r.retries,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Table-style rows: naive bias, total variance, time and sample cost.
pub fn write_baselines_csv<W: Write>(report: &ScalingReport, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in &report.rows {
        w.serialize(BaselineRecord {
            n: r.n,
            method: r.method,
            bias: r.bias_naive,
            variance: r.total_variance,
            time_us: r.mean_time_us,
            samples_per_estimate: r.samples_per_estimate,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_per_query_csv<W: Write>(report: &ScalingReport, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in &report.per_query {
        w.serialize(QueryRecord {
            query: r.query,
            n: r.n,
            method: r.method,
            bias_corrected: r.bias_corrected,
            bias_naive: r.bias_naive,
            std_error: r.std_error,
            total_variance: r.total_variance,
            clamped: r.clamped,
            retries: r.retries,
            mean_time_us: r.mean_time_us,
            predicted_standard_bias: r.predicted_standard_bias,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: ReportKind,
    seeds: &'a Seeds,
    slopes: &'a [SlopeEntry],
    rows: &'a [crate::harness::ReportRow],
    config: &'a crate::config::ExperimentConfig,
}

/// Config echo, seeds, slopes with standard errors and the averaged rows.
pub fn write_json_summary<W: Write>(report: &ScalingReport, mut out: W) -> Result<()> {
    let summary = Summary {
        kind: report.kind,
        seeds: &report.seeds,
        slopes: &report.slopes,
        rows: &report.rows,
        config: &report.config,
    };
    serde_json::to_writer_pretty(&mut out, &summary)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// One gnuplot data block per method (`index` selects it): `log10 n`,
/// `log10 bias`. Nonpositive biases are left out.
pub fn write_loglog<W: Write>(report: &ScalingReport, mut out: W) -> Result<()> {
    writeln!(out, "# log10(n) log10(bias)")?;
    for (i, &method) in report.config.harness.methods.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
            writeln!(out)?;
        }
        writeln!(out, "# {method}")?;
        for row in report.rows.iter().filter(|r| r.method == method) {
            let b = report.reported_bias(row);
            if b > 0.0 {
                writeln!(out, "{} {}", (row.n as f64).log10(), b.log10())?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointsKind {
    Pool = 0,
    Queries = 1,
}

/// A point set read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PointsFile {
    pub kind: PointsKind,
    pub seed: u64,
    pub spec: serde_json::Value,
    pub points: Points,
}

pub fn write_points<W: Write>(
    out: W,
    kind: PointsKind,
    seed: u64,
    spec: &serde_json::Value,
    points: &Points,
) -> Result<()> {
    let mut out = BufWriter::new(out);
    let spec = serde_json::to_vec(spec)?;
    out.write_all(POINTS_MAGIC)?;
    out.write_all(&[kind as u8])?;
    for v in [
        points.dim() as u64,
        points.len() as u64,
        seed,
        spec.len() as u64,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&spec)?;
    for v in points.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_points<R: Read>(input: R) -> Result<PointsFile> {
    let mut input = BufReader::new(input);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != POINTS_MAGIC {
        return Err(HarnessError::Format("not a point file".into()));
    }
    let mut byte = [0u8; 1];
    input.read_exact(&mut byte)?;
    let kind = match byte[0] {
        0 => PointsKind::Pool,
        1 => PointsKind::Queries,
        k => return Err(HarnessError::Format(format!("unknown point kind {k}"))),
    };
    let mut word = || -> Result<u64> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let dim = word()? as usize;
    let len = word()? as usize;
    let seed = word()?;
    let spec_len = word()?;
    let values = len
        .checked_mul(dim)
        .filter(|&v| v.checked_mul(8).is_some() && dim > 0)
        .ok_or_else(|| HarnessError::Format("bad point file dimensions".into()))?;
    let mut spec = Vec::new();
    (&mut input).take(spec_len).read_to_end(&mut spec)?;
    if spec.len() as u64 != spec_len {
        return Err(HarnessError::Format("truncated generator metadata".into()));
    }
    let spec = serde_json::from_slice(&spec)?;
    let mut data = Vec::with_capacity(values.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..values {
        input.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(HarnessError::Format(
            "trailing bytes after point data".into(),
        ));
    }
    let points = Points::new(dim, data).map_err(|e| HarnessError::Format(e.to_string()))?;
    Ok(PointsFile {
        kind,
        seed,
        spec,
        points,
    })
}

/// Writes `contents` to `path` through a temporary sibling and a rename, so
/// a failed run never leaves a truncated file behind.
pub fn write_file_atomic(
    path: &Path,
    contents: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let tmp = path.with_extension("partial");
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        contents(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            std::fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_round_trip() {
        let pts = Points::from_rows(&[[1.0, -2.5], [f64::MIN_POSITIVE, 3.0e300]]).unwrap();
        let spec = serde_json::json!({"sigma": 0.1});
        let mut buf = Vec::new();
        write_points(&mut buf, PointsKind::Queries, 42, &spec, &pts).unwrap();
        let back = read_points(buf.as_slice()).unwrap();
        assert_eq!(back.points, pts);
        assert_eq!(back.kind, PointsKind::Queries);
        assert_eq!(back.seed, 42);
        assert_eq!(back.spec, spec);
    }

    #[test]
    fn points_rejects_damage() {
        let pts = Points::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        write_points(
            &mut buf,
            PointsKind::Pool,
            1,
            &serde_json::Value::Null,
            &pts,
        )
        .unwrap();
        assert!(read_points(&buf[..buf.len() - 1]).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(read_points(longer.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_points(bad.as_slice()).is_err());
        assert!(read_points(&buf[..4]).is_err());
    }
}
