//! Three-cluster picture of the centroid bias: one query, one small
//! minibatch, and where the plain and corrected estimates land.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use snis_abc_core::streams::keyed_stream;
use snis_abc_core::{
    abc_centroid, draw_indices, standard_centroid, target_centroid, KernelSpec, Points,
    WeightProfile,
};

use crate::error::Result;

pub const CLUSTER_CENTERS: [[f64; 2]; 3] = [[-0.6, 0.0], [0.5, 0.45], [0.4, -0.55]];

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub seed: u64,
    pub cluster_size: usize,
    pub sigma: f64,
    pub query: [f64; 2],
    pub tau: f64,
    pub n: usize,
    /// Minibatches in the Monte Carlo comparison.
    pub trials: usize,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            seed: 7,
            cluster_size: 40,
            sigma: 0.08,
            query: [-0.3, 0.05],
            tau: 0.45,
            n: 4,
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoResult {
    pub points: Points,
    /// Cluster index per point.
    pub labels: Vec<usize>,
    pub query: [f64; 2],
    pub target: Vec<f64>,
    /// Estimates from the single illustrated minibatch.
    pub standard: Vec<f64>,
    pub abc: Vec<f64>,
    /// Mean distance to the target over all Monte Carlo minibatches.
    pub mean_error_standard: f64,
    pub mean_error_abc: f64,
}

pub fn run_demo(opts: &DemoOptions) -> Result<DemoResult> {
    let mut rng = keyed_stream(opts.seed, 0, 0, 0);
    let mut points = Points::with_capacity(2, 3 * opts.cluster_size)?;
    let mut labels = Vec::new();
    for (c, center) in CLUSTER_CENTERS.iter().enumerate() {
        for _ in 0..opts.cluster_size {
            let p: [f64; 2] = std::array::from_fn(|d| {
                let z: f64 = StandardNormal.sample(&mut rng);
                center[d] + opts.sigma * z
            });
            points.push_row(&p)?;
            labels.push(c);
        }
    }
    let kernel = KernelSpec::exponential(opts.tau)?;
    let target = target_centroid(&opts.query, &points, &kernel)?.value;

    let dist = |v: &[f64]| {
        v.iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut idx = Vec::new();
    let mut batch = Points::with_capacity(2, opts.n)?;
    let (mut err_std, mut err_abc) = (0.0, 0.0);
    let mut shown = None;
    for m in 0..opts.trials.max(1) {
        let mut rng = keyed_stream(opts.seed, 1, m as u64, 0);
        draw_indices(points.len(), opts.n, false, &mut rng, &mut idx)?;
        batch.gather_from(&points, &idx)?;
        let profile = WeightProfile::evaluate(&opts.query, &batch, &kernel)?;
        let s = standard_centroid(&profile, &batch)?.value;
        let a = abc_centroid(&profile, &batch)?.value;
        err_std += dist(&s);
        err_abc += dist(&a);
        if shown.is_none() {
            shown = Some((s, a));
        }
    }
    let trials = opts.trials.max(1) as f64;
    let (standard, abc) = shown.expect("at least one minibatch");
    Ok(DemoResult {
        points,
        labels,
        query: opts.query,
        target,
        standard,
        abc,
        mean_error_standard: err_std / trials,
        mean_error_abc: err_abc / trials,
    })
}

/// `label,x,y` rows: every cluster point, then the query, target and the
/// two estimates from the illustrated minibatch.
pub fn write_demo_csv<W: Write>(result: &DemoResult, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record(["label", "x", "y"])?;
    for (p, c) in result.points.rows().zip(&result.labels) {
        w.serialize((format!("cluster{c}"), p[0], p[1]))?;
    }
    w.serialize(("query", result.query[0], result.query[1]))?;
    w.serialize(("target", result.target[0], result.target[1]))?;
    w.serialize(("standard", result.standard[0], result.standard[1]))?;
    w.serialize(("abc", result.abc[0], result.abc[1]))?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_file_shape_and_repeatability() {
        let opts = DemoOptions {
            trials: 200,
            ..DemoOptions::default()
        };
        let mut a = Vec::new();
        write_demo_csv(&run_demo(&opts).unwrap(), &mut a).unwrap();
        let mut b = Vec::new();
        write_demo_csv(&run_demo(&opts).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * opts.cluster_size + 4);
        assert!(text.starts_with("label,x,y\r\n"));
    }
}
