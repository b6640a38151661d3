//! Ground truth computed from a full reference pool.
//!
//! The pool is treated as the distribution itself, so every expectation here
//! is an exact average over its points. Reductions run sequentially in index
//! order and are therefore independent of any caller-side parallelism.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::standard_centroid;
use crate::float;
use crate::kernel::{KernelSpec, WeightProfile};
use crate::points::Points;

/// The softmax-weighted centroid `T*(x)` of a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCentroid {
    pub value: Vec<f64>,
    /// Mean kernel weight over the pool, `mu_w`.
    pub mean_weight: f64,
    /// Mean squared kernel weight over the pool.
    pub mean_weight_sq: f64,
    /// `log(mu_w)`; stays finite when `mean_weight` underflows.
    pub log_mean_weight: f64,
}

/// Leading-order bias coefficient: the bias of the standard centroid at batch
/// size `n` is `vector / n + O(1/n^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingBias {
    /// `-E[w^2 (y - T*)] / E[w]^2`.
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl LeadingBias {
    /// Predicted bias at batch size `n`.
    pub fn at(&self, n: usize) -> Vec<f64> {
        self.vector.iter().map(|v| v / n as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveSampleSize {
    pub n_eff: f64,
    /// `E[w^2] / E[w]^2 >= 1`.
    pub lambda: f64,
}

/// `T*(x) = sum w_i y_i / sum w_i` over the whole pool.
///
/// Runs the same kernel and standard-centroid path as a minibatch estimate,
/// with the pool as the batch.
pub fn target_centroid(x: &[f64], pool: &Points, kernel: &KernelSpec) -> Result<TargetCentroid> {
    let profile = WeightProfile::evaluate(x, pool, kernel)?;
    target_from_profile(&profile, pool)
}

fn target_from_profile(profile: &WeightProfile, pool: &Points) -> Result<TargetCentroid> {
    let value = standard_centroid(profile, pool)?.value;
    let n = pool.len() as f64;
    let log_mean_weight = profile.log_mean_weight();
    // mean(w^2) / mean(w)^2 = n * sum(alpha^2)
    let log_mean_weight_sq = 2.0 * log_mean_weight + float::ln(n * profile.sum_alpha_sq());
    Ok(TargetCentroid {
        value,
        mean_weight: float::exp(log_mean_weight),
        mean_weight_sq: float::exp(log_mean_weight_sq),
        log_mean_weight,
    })
}

/// `-E[w^2 (y - T*)] / E[w]^2`, evaluated as `-N sum_i alpha_i^2 (y_i - T*)`.
pub fn leading_bias(x: &[f64], pool: &Points, kernel: &KernelSpec) -> Result<LeadingBias> {
    let profile = WeightProfile::evaluate(x, pool, kernel)?;
    let target = standard_centroid(&profile, pool)?.value;
    let n = pool.len() as f64;
    let mut vector = vec![0.0; pool.dim()];
    for (&a, y) in profile.alpha().iter().zip(pool.rows()) {
        let a2 = a * a;
        for ((v, yv), t) in vector.iter_mut().zip(y).zip(&target) {
            *v += a2 * (yv - t);
        }
    }
    vector.iter_mut().for_each(|v| *v *= -n);
    let norm = float::sqrt(vector.iter().map(|v| v * v).sum());
    Ok(LeadingBias { vector, norm })
}

/// Exact bias of the single-sample estimate, `E[T_1] - T* = -Cov(w, y) / E[w]`,
/// with the population covariance over the pool.
pub fn n1_bias(x: &[f64], pool: &Points, kernel: &KernelSpec) -> Result<Vec<f64>> {
    if pool.len() < 2 {
        return Err(Error::invalid(
            "n = 1 bias needs a pool of at least two points",
        ));
    }
    let profile = WeightProfile::evaluate(x, pool, kernel)?;
    let n = pool.len() as f64;
    let dim = pool.dim();
    // Weights rescaled by a common factor; the ratio is unaffected.
    let max = profile
        .log_weights()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut mean_w = 0.0;
    let mut mean_y = vec![0.0; dim];
    let mut mean_wy = vec![0.0; dim];
    for (&lw, y) in profile.log_weights().iter().zip(pool.rows()) {
        let w = float::exp(lw - max);
        mean_w += w;
        for d in 0..dim {
            mean_y[d] += y[d];
            mean_wy[d] += w * y[d];
        }
    }
    mean_w /= n;
    Ok((0..dim)
        .map(|d| {
            let cov = mean_wy[d] / n - mean_w * (mean_y[d] / n);
            -cov / mean_w
        })
        .collect())
}

/// Effective sample size `n_eff = n / lambda` at batch size `n`.
pub fn effective_sample_size(
    x: &[f64],
    pool: &Points,
    kernel: &KernelSpec,
    n: usize,
) -> Result<EffectiveSampleSize> {
    if n == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let profile = WeightProfile::evaluate(x, pool, kernel)?;
    let lambda = pool.len() as f64 * profile.sum_alpha_sq();
    Ok(EffectiveSampleSize {
        n_eff: n as f64 / lambda,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{build_pool, GaussianMixtureSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn circle(center: [f64; 2], radius: f64, k: usize) -> Points {
        let rows: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let t = 2.0 * core::f64::consts::PI * (i as f64 + 0.3) / k as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        Points::from_rows(&rows).unwrap()
    }

    fn symmetric_pool(center: [f64; 2]) -> Points {
        let half = [
            [0.3, 0.1],
            [0.9, -0.4],
            [0.05, 0.6],
            [-0.2, 0.25],
            [1.5, 1.1],
        ];
        let mut rows = Vec::new();
        for h in half {
            rows.push([center[0] + h[0], center[1] + h[1]]);
            rows.push([center[0] - h[0], center[1] - h[1]]);
        }
        Points::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_point_pool() {
        let pool = Points::from_rows(&[[0.7, -0.1]]).unwrap();
        let k = KernelSpec::exponential(0.1).unwrap();
        let t = target_centroid(&[5.0, 5.0], &pool, &k).unwrap();
        assert_eq!(t.value, vec![0.7, -0.1]);
        assert!(n1_bias(&[0.0, 0.0], &pool, &k).is_err());
    }

    #[test]
    fn two_point_pool_hand_values() {
        let pool = Points::from_rows(&[[0.0], [1.0]]).unwrap();
        let k = KernelSpec::exponential(1.0).unwrap();
        let t = target_centroid(&[0.0], &pool, &k).unwrap();
        let e = (-1.0f64).exp();
        assert_relative_eq!(t.value[0], e / (1.0 + e), max_relative = 1e-15);
        assert_relative_eq!(t.mean_weight, (1.0 + e) / 2.0, max_relative = 1e-14);
        assert_relative_eq!(t.mean_weight_sq, (1.0 + e * e) / 2.0, max_relative = 1e-14);
        let ess = effective_sample_size(&[0.0], &pool, &k, 10).unwrap();
        let lambda = (1.0 + e * e) / ((1.0 + e) / 2.0).powi(2) / 2.0;
        assert_relative_eq!(ess.lambda, lambda, max_relative = 1e-14);
        assert_relative_eq!(ess.n_eff, 10.0 / lambda, max_relative = 1e-14);
    }

    #[test]
    fn constant_weight_pool_has_no_bias() {
        let x = [0.2, -0.3];
        let pool = circle(x, 0.4, 24);
        let k = KernelSpec::exponential(0.1).unwrap();
        let lb = leading_bias(&x, &pool, &k).unwrap();
        assert!(lb.norm < 1e-12, "{lb:?}");
        assert!(n1_bias(&x, &pool, &k)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
        let ess = effective_sample_size(&x, &pool, &k, 16).unwrap();
        assert_relative_eq!(ess.lambda, 1.0, max_relative = 1e-12);
        assert_relative_eq!(ess.n_eff, 16.0, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_pool_has_no_bias() {
        let x = [0.4, 0.1];
        let pool = symmetric_pool(x);
        let k = KernelSpec::exponential(0.3).unwrap();
        let t = target_centroid(&x, &pool, &k).unwrap();
        for (a, b) in t.value.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(leading_bias(&x, &pool, &k).unwrap().norm < 1e-12);
    }

    #[test]
    fn target_matches_standard_on_full_pool() {
        let pool = build_pool(&GaussianMixtureSpec::four_mode(), 5_000, 11).unwrap();
        let k = KernelSpec::exponential(0.1).unwrap();
        let x = [0.31, 0.62];
        let t = target_centroid(&x, &pool.points, &k).unwrap();
        let p = WeightProfile::evaluate(&x, &pool.points, &k).unwrap();
        let s = standard_centroid(&p, &pool.points).unwrap();
        assert_eq!(t.value, s.value);
        assert!(t.mean_weight > 0.0 && t.mean_weight <= 1.0);
    }

    #[test]
    fn n1_bias_identity() {
        let pool = build_pool(&GaussianMixtureSpec::four_mode(), 20_000, 4).unwrap();
        let k = KernelSpec::exponential(0.1).unwrap();
        for x in [[0.45, 0.52], [-0.1, 0.3], [0.0, 0.0]] {
            let b = n1_bias(&x, &pool.points, &k).unwrap();
            let t = target_centroid(&x, &pool.points, &k).unwrap().value;
            let m = pool.points.mean();
            for d in 0..2 {
                assert!((b[d] - (m[d] - t[d])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_grows_as_temperature_drops() {
        let pool = build_pool(&GaussianMixtureSpec::four_mode(), 10_000, 8).unwrap();
        let x = [0.2, 0.4];
        let at = |tau: f64| {
            effective_sample_size(&x, &pool.points, &KernelSpec::exponential(tau).unwrap(), 32)
                .unwrap()
                .lambda
        };
        assert!(at(0.05) >= at(0.1));
        let mut prev = 1.0;
        for tau in [2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01] {
            let l = at(tau);
            assert!(l >= prev - 1e-12, "tau {tau}: {l} < {prev}");
            prev = l;
        }
    }

    proptest! {
        #[test]
        fn lambda_at_least_one(
            coords in proptest::collection::vec(-2.0f64..2.0, 2..60),
            tau in 0.01f64..3.0,
        ) {
            let m = coords.len() / 2 * 2;
            prop_assume!(m >= 2);
            let pool = Points::new(2, coords[..m].to_vec()).unwrap();
            let k = KernelSpec::exponential(tau).unwrap();
            let ess = effective_sample_size(&[0.1, -0.2], &pool, &k, 8).unwrap();
            prop_assert!(ess.lambda >= 1.0 - 1e-12);
            prop_assert!(ess.n_eff <= 8.0 + 1e-9);
        }
    }
}
