//! Monte Carlo aggregation, bias-norm estimation and log-log slope fits.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float;

/// Running sums over Monte Carlo trials at one `(query, n, method)` point.
///
/// Sums are kept relative to the first observation, which keeps the second
/// moments accurate when the spread is small next to the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialAggregate {
    dim: usize,
    count: u64,
    shift: Vec<f64>,
    sum: Vec<f64>,
    /// Row-major `dim x dim` sums of outer products of shifted values.
    sum_outer: Vec<f64>,
    sum_time_ns: u64,
    timed_count: u64,
}

impl TrialAggregate {
    pub fn new(dim: usize) -> Self {
        TrialAggregate {
            dim,
            count: 0,
            shift: vec![0.0; dim],
            sum: vec![0.0; dim],
            sum_outer: vec![0.0; dim * dim],
            sum_time_ns: 0,
            timed_count: 0,
        }
    }

    pub fn push(&mut self, value: &[f64]) {
        debug_assert_eq!(value.len(), self.dim);
        if self.count == 0 {
            self.shift.copy_from_slice(value);
        }
        self.count += 1;
        for i in 0..self.dim {
            let di = value[i] - self.shift[i];
            self.sum[i] += di;
            let row = &mut self.sum_outer[i * self.dim..(i + 1) * self.dim];
            for ((o, v), s) in row.iter_mut().zip(value).zip(&self.shift) {
                *o += di * (v - s);
            }
        }
    }

    pub fn record_time_ns(&mut self, ns: u64) {
        self.sum_time_ns += ns;
        self.timed_count += 1;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum_time_ns(&self) -> u64 {
        self.sum_time_ns
    }

    pub fn timed_count(&self) -> u64 {
        self.timed_count
    }

    /// Mean wall time per timed estimate, if any were timed.
    pub fn mean_time_ns(&self) -> Option<f64> {
        (self.timed_count > 0).then(|| self.sum_time_ns as f64 / self.timed_count as f64)
    }

    pub fn mean(&self) -> Vec<f64> {
        let c = self.count.max(1) as f64;
        self.shift
            .iter()
            .zip(&self.sum)
            .map(|(s, v)| s + v / c)
            .collect()
    }

    /// Unbiased sample covariance (divisor `count - 1`), row-major.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                available: self.count as usize,
            });
        }
        let c = self.count as f64;
        let mut cov = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let raw = self.sum_outer[i * self.dim + j] - self.sum[i] * self.sum[j] / c;
                cov[i * self.dim + j] = raw / (c - 1.0);
            }
        }
        Ok(cov)
    }

    /// `tr(Sigma)`: the total variance summed over coordinates.
    pub fn total_variance(&self) -> Result<f64> {
        let cov = self.covariance()?;
        Ok((0..self.dim).map(|i| cov[i * self.dim + i].max(0.0)).sum())
    }
}

/// Observed and variance-corrected bias norms at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasNorm {
    /// `sqrt(max(0, |mean - target|^2 - tr(Sigma)/M))`.
    pub corrected: f64,
    /// `|mean - target|`.
    pub naive: f64,
    /// Whether the corrected square was negative and clamped to zero.
    pub clamped: bool,
    /// Monte Carlo standard error of the bias norm: the standard error of
    /// the trial mean projected on the observed bias direction.
    pub std_error: f64,
    /// `tr(Sigma)` of the trial values.
    pub total_variance: f64,
}

pub fn bias_corrected_norm(agg: &TrialAggregate, target: &[f64]) -> Result<BiasNorm> {
    if agg.count() < 2 {
        return Err(Error::invalid("bias norm needs at least two trials"));
    }
    if target.len() != agg.dim() {
        return Err(Error::DimensionMismatch {
            expected: agg.dim(),
            found: target.len(),
        });
    }
    let m = agg.count() as f64;
    let dim = agg.dim();
    let cov = agg.covariance()?;
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i].max(0.0)).sum();
    let offset: Vec<f64> = agg.mean().iter().zip(target).map(|(a, t)| a - t).collect();
    let naive_sq: f64 = offset.iter().map(|v| v * v).sum();
    let naive = float::sqrt(naive_sq);
    let corrected_sq = naive_sq - trace / m;
    let clamped = corrected_sq < 0.0;
    let corrected = if clamped {
        0.0
    } else {
        float::sqrt(corrected_sq)
    };

    let projected_var = if naive > 0.0 {
        let mut q = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                q += offset[i] * cov[i * dim + j] * offset[j];
            }
        }
        q / naive_sq
    } else {
        trace / dim as f64
    };
    Ok(BiasNorm {
        corrected,
        naive,
        clamped,
        std_error: float::sqrt(projected_var.max(0.0) / m),
        total_variance: trace,
    })
}

/// Ordinary least squares fit of `log(value)` on `log(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for an exact power law.
    pub stderr: f64,
}

pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            available: points.len(),
        });
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(n, v) in points {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("slope fit needs positive sizes"));
        }
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid("slope fit needs positive values"));
        }
        xs.push(float::ln(n));
        ys.push(float::ln(v));
    }
    for i in 0..xs.len() {
        if xs[i + 1..].contains(&xs[i]) {
            return Err(Error::invalid("slope fit needs distinct sizes"));
        }
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let stderr = float::sqrt(ssr / (k - 2.0) / sxx);
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_trial_mean_and_no_variance() {
        let mut agg = TrialAggregate::new(2);
        agg.push(&[0.3, -0.2]);
        assert_eq!(agg.mean(), vec![0.3, -0.2]);
        assert!(agg.covariance().is_err());
        assert!(bias_corrected_norm(&agg, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn identical_trials_have_zero_trace() {
        let mut agg = TrialAggregate::new(2);
        for _ in 0..10 {
            agg.push(&[0.5, 0.25]);
        }
        let b = bias_corrected_norm(&agg, &[0.2, 0.65]).unwrap();
        assert_eq!(b.total_variance, 0.0);
        assert_relative_eq!(b.naive, 0.5, max_relative = 1e-14);
        assert_eq!(b.corrected, b.naive);
        assert!(!b.clamped);
    }

    #[test]
    fn clamps_when_mean_hits_target() {
        let mut agg = TrialAggregate::new(2);
        for v in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
            agg.push(&v);
        }
        let b = bias_corrected_norm(&agg, &[0.0, 0.0]).unwrap();
        assert_eq!(b.corrected, 0.0);
        assert!(b.clamped);
    }

    #[test]
    fn constructed_aggregate() {
        // Offsets (delta + s, delta - s) per coordinate with M = 4 trials:
        // the per-coordinate mean is delta and the unbiased variance is
        // v = 4 s^2 / 3. The bias vector is (delta, 0).
        let (delta, s) = (0.3, 0.05);
        let mut agg = TrialAggregate::new(2);
        for (a, b) in [(s, s), (-s, -s), (s, -s), (-s, s)] {
            agg.push(&[1.0 + delta + a, 2.0 + b]);
        }
        let v = 4.0 * s * s / 3.0;
        let b = bias_corrected_norm(&agg, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(b.total_variance, 2.0 * v, max_relative = 1e-12);
        assert_relative_eq!(
            b.corrected,
            (delta * delta - 2.0 * v / 4.0).sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(b.naive, delta, max_relative = 1e-12);
        // Projection on the bias direction sees only the first coordinate.
        assert_relative_eq!(b.std_error, (v / 4.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn shifted_sums_match_two_pass_covariance() {
        let vals = [
            [1e6 + 0.1, 3.0],
            [1e6 - 0.2, 2.5],
            [1e6 + 0.05, 3.5],
            [1e6 + 0.3, 2.0],
        ];
        let mut agg = TrialAggregate::new(2);
        vals.iter().for_each(|v| agg.push(v));
        let mean = agg.mean();
        let mut cov01 = 0.0;
        let mut var0 = 0.0;
        for v in &vals {
            cov01 += (v[0] - mean[0]) * (v[1] - mean[1]);
            var0 += (v[0] - mean[0]).powi(2);
        }
        let cov = agg.covariance().unwrap();
        assert_relative_eq!(cov[1], cov01 / 3.0, max_relative = 1e-9);
        assert_relative_eq!(cov[0], var0 / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn timing_mean() {
        let mut agg = TrialAggregate::new(1);
        assert_eq!(agg.mean_time_ns(), None);
        agg.record_time_ns(10);
        agg.record_time_ns(30);
        assert_eq!(agg.mean_time_ns(), Some(20.0));
    }

    #[test]
    fn exact_power_laws() {
        let inv: Vec<(f64, f64)> = [4.0, 16.0, 64.0, 256.0]
            .iter()
            .map(|&n| (n, 3.0 / n))
            .collect();
        let f = fit_slope(&inv).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-10);
        assert_relative_eq!(f.intercept, 3.0f64.ln(), max_relative = 1e-10);
        let inv2: Vec<(f64, f64)> = [8.0, 16.0, 32.0, 512.0]
            .iter()
            .map(|&n| (n, 0.7 / (n * n)))
            .collect();
        assert!((fit_slope(&inv2).unwrap().slope + 2.0).abs() < 1e-10);
        let f = fit_slope(&[(2.0, 8.0), (4.0, 2.0), (8.0, 0.5)]).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!(f.stderr < 1e-12);
    }

    #[test]
    fn slope_errors() {
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_slope(&[(1.0, 1.0), (1.0, 2.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn slope_stderr_on_noisy_points() {
        let e = 0.1f64;
        let pts = [
            (1.0, e.exp()),
            (core::f64::consts::E, (-1.0 - e).exp()),
            (core::f64::consts::E.powi(2), (-2.0 + e).exp()),
            (core::f64::consts::E.powi(3), (-3.0 - e).exp()),
        ];
        let f = fit_slope(&pts).unwrap();
        // x = 0..3, y = -x + (e, -e, e, -e), sxx = 5.
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [e, -1.0 - e, -2.0 + e, -3.0 - e];
        let sxy: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - 1.5) * (y - (-1.5)))
            .sum();
        assert_relative_eq!(f.slope, sxy / 5.0, max_relative = 1e-12);
        assert!(f.stderr > 0.0);
    }
}
