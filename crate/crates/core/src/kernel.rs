//! Kernel weights and softmax normalization for one query against a batch.
//!
//! Weights are carried as log weights and normalized with max subtraction, so
//! small temperatures never underflow to an all-zero weight vector.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float;
use crate::points::Points;

/// Kernel families. Only the exponential L2 kernel `exp(-|x - y|_2 / tau)` is
/// provided; new members need a matching arm in [`KernelSpec::log_kernel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
#[non_exhaustive]
pub enum KernelFamily {
    #[default]
    ExponentialL2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    tau: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(
                "kernel temperature must be positive and finite",
            ));
        }
        Ok(KernelSpec { family, tau })
    }

    /// `k(x, y) = exp(-|x - y|_2 / tau)`.
    pub fn exponential(tau: f64) -> Result<Self> {
        Self::new(KernelFamily::ExponentialL2, tau)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `log k(x, y)`. Callers guarantee equal lengths.
    #[inline]
    pub fn log_kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::ExponentialL2 => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                -float::sqrt(sq) / self.tau
            }
        }
    }
}

/// Log kernel weights `log w_i` of `x` against every row of `batch`.
pub fn eval_log_weights(x: &[f64], batch: &Points, spec: &KernelSpec) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len());
    eval_log_weights_into(x, batch, spec, &mut out)?;
    Ok(out)
}

/// Like [`eval_log_weights`], writing into a reusable buffer.
pub fn eval_log_weights_into(
    x: &[f64],
    batch: &Points,
    spec: &KernelSpec,
    out: &mut Vec<f64>,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x.len() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            found: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("query has non-finite coordinates"));
    }
    out.clear();
    for y in batch.rows() {
        let lw = spec.log_kernel(x, y);
        // NaN or infinite coordinates in the batch surface here.
        if !lw.is_finite() {
            return Err(Error::invalid("batch point has non-finite coordinates"));
        }
        out.push(lw);
    }
    Ok(())
}

/// Kernel weights and their softmax normalization for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    log_weights: Vec<f64>,
    alpha: Vec<f64>,
    sum_alpha_sq: f64,
    log_mean_weight: f64,
}

impl WeightProfile {
    /// Softmax-normalizes `log_weights` via log-sum-exp with max subtraction.
    pub fn normalize(log_weights: Vec<f64>) -> Result<Self> {
        let mut profile = WeightProfile {
            log_weights,
            alpha: Vec::new(),
            sum_alpha_sq: 0.0,
            log_mean_weight: 0.0,
        };
        profile.renormalize()?;
        Ok(profile)
    }

    /// Evaluates the kernel and normalizes in one step.
    pub fn evaluate(x: &[f64], batch: &Points, spec: &KernelSpec) -> Result<Self> {
        Self::normalize(eval_log_weights(x, batch, spec)?)
    }

    /// Re-evaluates in place for a new query or batch, reusing allocations.
    pub fn reevaluate(&mut self, x: &[f64], batch: &Points, spec: &KernelSpec) -> Result<()> {
        eval_log_weights_into(x, batch, spec, &mut self.log_weights)?;
        self.renormalize()
    }

    fn renormalize(&mut self) -> Result<()> {
        let lw = &self.log_weights;
        if lw.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut max = f64::NEG_INFINITY;
        for &v in lw {
            if !v.is_finite() {
                return Err(Error::invalid("non-finite log weight"));
            }
            if v > max {
                max = v;
            }
        }
        self.alpha.clear();
        self.alpha.extend(lw.iter().map(|&v| float::exp(v - max)));
        // The max element contributes exp(0) = 1, so the sum is >= 1.
        let total: f64 = self.alpha.iter().sum();
        let mut sum_sq = 0.0;
        for a in self.alpha.iter_mut() {
            *a /= total;
            sum_sq += *a * *a;
        }
        self.sum_alpha_sq = sum_sq;
        self.log_mean_weight = max + float::ln(total) - float::ln(lw.len() as f64);
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalized softmax weights `alpha_i`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `sum_i alpha_i^2`, in `[1/n, 1]`.
    pub fn sum_alpha_sq(&self) -> f64 {
        self.sum_alpha_sq
    }

    /// `log((1/n) sum_i w_i)`.
    pub fn log_mean_weight(&self) -> f64 {
        self.log_mean_weight
    }

    pub fn max_alpha(&self) -> (usize, f64) {
        self.alpha
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, a)| {
                if a > best.1 {
                    (i, a)
                } else {
                    best
                }
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> Points {
        Points::from_rows(rows).unwrap()
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(KernelSpec::exponential(0.0).is_err());
        assert!(KernelSpec::exponential(-1.0).is_err());
        assert!(KernelSpec::exponential(f64::NAN).is_err());
    }

    #[test]
    fn zero_distance_gives_unit_weight() {
        let k = KernelSpec::exponential(0.3).unwrap();
        let lw = eval_log_weights(&[1.5, -2.0], &pts(&[&[1.5, -2.0]]), &k).unwrap();
        assert_eq!(lw, vec![0.0]);
    }

    #[test]
    fn hand_evaluated_log_weights() {
        let k = KernelSpec::exponential(1.0).unwrap();
        let lw = eval_log_weights(&[0.0], &pts(&[&[0.0], &[1.0]]), &k).unwrap();
        assert_eq!(lw, vec![0.0, -1.0]);
    }

    #[test]
    fn ratio_invariance_under_common_scaling() {
        let k1 = KernelSpec::exponential(0.2).unwrap();
        let k2 = KernelSpec::exponential(0.2 * 7.5).unwrap();
        let batch = pts(&[&[0.1, 0.4], &[-0.3, 0.2], &[1.0, -1.0]]);
        let scaled = Points::new(2, batch.as_slice().iter().map(|v| v * 7.5).collect()).unwrap();
        let a = eval_log_weights(&[0.05, 0.05], &batch, &k1).unwrap();
        let b = eval_log_weights(&[0.375, 0.375], &scaled, &k2).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_relative_eq!(u, v, max_relative = 1e-14);
        }
    }

    #[test]
    fn input_errors() {
        let k = KernelSpec::exponential(1.0).unwrap();
        let empty = Points::with_capacity(1, 0).unwrap();
        assert_eq!(eval_log_weights(&[0.0], &empty, &k), Err(Error::EmptyBatch));
        assert!(matches!(
            eval_log_weights(&[f64::NAN], &pts(&[&[0.0]]), &k),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            eval_log_weights(&[0.0], &pts(&[&[f64::INFINITY]]), &k),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            WeightProfile::normalize(vec![0.0, f64::NEG_INFINITY]),
            Err(Error::InvalidInput(_))
        ));
        assert_eq!(WeightProfile::normalize(vec![]), Err(Error::EmptyBatch));
    }

    #[test]
    fn equal_log_weights_are_exactly_uniform() {
        let p = WeightProfile::normalize(vec![-3.25; 8]).unwrap();
        assert!(p.alpha().iter().all(|&a| a == 0.125));
        assert_eq!(p.sum_alpha_sq(), 0.125);
    }

    #[test]
    fn two_point_softmax() {
        let p = WeightProfile::normalize(vec![0.0, -1.0]).unwrap();
        let e = (-1.0f64).exp();
        assert_relative_eq!(p.alpha()[0], 1.0 / (1.0 + e), max_relative = 1e-15);
        assert_relative_eq!(p.alpha()[1], e / (1.0 + e), max_relative = 1e-15);
        assert!((p.alpha()[0] - 0.7311).abs() < 1e-4);
        assert!((p.alpha()[1] - 0.2689).abs() < 1e-4);
        assert_relative_eq!(
            p.log_mean_weight(),
            ((1.0 + e) / 2.0).ln(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn single_sample() {
        let p = WeightProfile::normalize(vec![-42.0]).unwrap();
        assert_eq!(p.alpha(), &[1.0]);
        assert_eq!(p.sum_alpha_sq(), 1.0);
    }

    #[test]
    fn extreme_spread_does_not_underflow_to_nan() {
        let p = WeightProfile::normalize(vec![0.0, -1e6]).unwrap();
        assert_eq!(p.alpha(), &[1.0, 0.0]);
        assert_eq!(p.sum_alpha_sq(), 1.0);
        // Both weights far below the f64 exponent range.
        let p = WeightProfile::normalize(vec![-2000.0, -2001.0]).unwrap();
        assert!(p.alpha().iter().all(|a| a.is_finite() && *a > 0.0));
    }

    proptest! {
        #[test]
        fn shift_invariance(
            lw in proptest::collection::vec(-50.0f64..0.0, 1..40),
            c in -1e3f64..1e3,
        ) {
            let a = WeightProfile::normalize(lw.clone()).unwrap();
            let b = WeightProfile::normalize(lw.iter().map(|v| v + c).collect()).unwrap();
            for (u, v) in a.alpha().iter().zip(b.alpha()) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }

        #[test]
        fn profile_invariants(lw in proptest::collection::vec(-80.0f64..0.0, 1..60)) {
            let p = WeightProfile::normalize(lw.clone()).unwrap();
            let n = lw.len() as f64;
            let total: f64 = p.alpha().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.alpha().iter().all(|&a| a >= 0.0));
            prop_assert!(p.sum_alpha_sq() >= 1.0 / n - 1e-15 && p.sum_alpha_sq() <= 1.0 + 1e-15);
            for i in 0..lw.len() {
                for j in 0..lw.len() {
                    if lw[i] > lw[j] {
                        prop_assert!(p.alpha()[i] >= p.alpha()[j]);
                    }
                }
            }
        }
    }
}
