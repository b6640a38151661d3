//! Centroid estimators over a minibatch.
//!
//! All fixed-pool estimators take a [`WeightProfile`] evaluated against the
//! same batch they receive. BR-SNIS instead draws its own reference samples.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::float;
use crate::kernel::{KernelSpec, WeightProfile};
use crate::points::Points;

/// Jackknife rejects batches whose largest softmax weight exceeds
/// `1 - JACKKNIFE_DOMINANCE_SLACK`.
pub const JACKKNIFE_DOMINANCE_SLACK: f64 = 1e-8;

/// Below this the largest rescaled bootstrap weight is renormalized in log
/// space instead.
const BOOTSTRAP_RESCALE_FLOOR: f64 = 1e-200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Standard,
    Abc,
    Jackknife,
    Bootstrap,
    Brsnis,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Standard,
        Method::Abc,
        Method::Jackknife,
        Method::Bootstrap,
        Method::Brsnis,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Abc => "abc",
            Method::Jackknife => "jackknife",
            Method::Bootstrap => "bootstrap",
            Method::Brsnis => "brsnis",
        }
    }

    /// Whether the method works on a fixed minibatch (everything but BR-SNIS).
    pub fn uses_fixed_batch(&self) -> bool {
        !matches!(self, Method::Brsnis)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown method `{s}`")))
    }
}

/// Output of any estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidEstimate {
    pub value: Vec<f64>,
    pub method: Method,
    /// Reference draws consumed beyond the nominal `n`; nonzero only for
    /// BR-SNIS.
    pub extra_samples_consumed: usize,
}

impl CentroidEstimate {
    fn fixed(value: Vec<f64>, method: Method) -> Self {
        CentroidEstimate {
            value,
            method,
            extra_samples_consumed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapSpec {
    replicates: usize,
}

impl BootstrapSpec {
    pub fn new(replicates: usize) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::invalid("bootstrap needs at least one replicate"));
        }
        Ok(BootstrapSpec { replicates })
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec { replicates: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrSnisSpec {
    iterations: usize,
    burn_in: usize,
}

impl BrSnisSpec {
    pub fn new(iterations: usize, burn_in: usize) -> Result<Self> {
        if iterations == 0 || burn_in >= iterations {
            return Err(Error::invalid("BR-SNIS needs iterations > burn_in >= 0"));
        }
        Ok(BrSnisSpec {
            iterations,
            burn_in,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// Reference draws one estimate consumes at batch size `n`: `K(n-1)+1`.
    pub fn sample_budget(&self, n: usize) -> usize {
        self.iterations * n.saturating_sub(1) + 1
    }
}

impl Default for BrSnisSpec {
    fn default() -> Self {
        BrSnisSpec {
            iterations: 10,
            burn_in: 1,
        }
    }
}

fn check_pair(profile: &WeightProfile, batch: &Points) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if profile.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            found: profile.len(),
        });
    }
    Ok(())
}

/// `sum_i weights_i * row_i` accumulated into `out`.
#[inline]
fn weighted_sum_into(weights: &[f64], batch: &Points, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (w, y) in weights.iter().zip(batch.rows()) {
        for (o, v) in out.iter_mut().zip(y) {
            *o += w * v;
        }
    }
}

/// The minibatch centroid `T_n = sum_i alpha_i y_i`.
pub fn standard_centroid(profile: &WeightProfile, batch: &Points) -> Result<CentroidEstimate> {
    check_pair(profile, batch)?;
    let mut value = vec![0.0; batch.dim()];
    weighted_sum_into(profile.alpha(), batch, &mut value);
    Ok(CentroidEstimate::fixed(value, Method::Standard))
}

/// Convex weights `gamma_i = alpha_i (1 - sum_j alpha_j^2) + alpha_i^2` of the
/// bias-corrected centroid. Nonnegative and summing to one.
pub fn abc_weights(profile: &WeightProfile) -> Vec<f64> {
    let keep = 1.0 - profile.sum_alpha_sq();
    profile.alpha().iter().map(|&a| a * keep + a * a).collect()
}

/// Analytical bias correction:
/// `T_n^ABC = (1 - sum alpha_i^2) T_n + sum alpha_i^2 y_i`.
///
/// Evaluated as a single weighted sum with [`abc_weights`], so the result
/// always lies in the convex hull of the batch. Costs `O(nD)`.
pub fn abc_centroid(profile: &WeightProfile, batch: &Points) -> Result<CentroidEstimate> {
    check_pair(profile, batch)?;
    let keep = 1.0 - profile.sum_alpha_sq();
    let mut value = vec![0.0; batch.dim()];
    for (&a, y) in profile.alpha().iter().zip(batch.rows()) {
        let g = a * keep + a * a;
        for (o, v) in value.iter_mut().zip(y) {
            *o += g * v;
        }
    }
    Ok(CentroidEstimate::fixed(value, Method::Abc))
}

/// The plug-in correction `Delta_n = sum_i alpha_i^2 (T_n - y_i)`, so that
/// `T_n^ABC = T_n - Delta_n`.
pub fn plugin_correction(profile: &WeightProfile, batch: &Points) -> Result<Vec<f64>> {
    let t = standard_centroid(profile, batch)?.value;
    let mut delta = vec![0.0; batch.dim()];
    for (&a, y) in profile.alpha().iter().zip(batch.rows()) {
        let a2 = a * a;
        for ((d, tv), v) in delta.iter_mut().zip(&t).zip(y) {
            *d += a2 * (tv - v);
        }
    }
    Ok(delta)
}

/// All leave-one-out centroids `T_{n,-i} = (T_n - alpha_i y_i) / (1 - alpha_i)`,
/// one per row.
pub fn leave_one_out_centroids(profile: &WeightProfile, batch: &Points) -> Result<Points> {
    check_pair(profile, batch)?;
    let n = batch.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: n,
        });
    }
    let (index, alpha) = profile.max_alpha();
    if alpha > 1.0 - JACKKNIFE_DOMINANCE_SLACK {
        return Err(Error::DominatedWeight { index, alpha });
    }
    let mut t = vec![0.0; batch.dim()];
    weighted_sum_into(profile.alpha(), batch, &mut t);
    let mut out = Points::zeros(n, batch.dim())?;
    for (i, (&a, y)) in profile.alpha().iter().zip(batch.rows()).enumerate() {
        let scale = 1.0 / (1.0 - a);
        for ((o, tv), v) in out.row_mut(i).iter_mut().zip(&t).zip(y) {
            *o = (tv - a * v) * scale;
        }
    }
    Ok(out)
}

/// Jackknife correction `n T_n - (n-1) mean_i T_{n,-i}`.
///
/// Fails with [`Error::DominatedWeight`] when one weight is within
/// [`JACKKNIFE_DOMINANCE_SLACK`] of one.
pub fn jackknife_centroid(profile: &WeightProfile, batch: &Points) -> Result<CentroidEstimate> {
    let loo = leave_one_out_centroids(profile, batch)?;
    let n = batch.len() as f64;
    let mut t = vec![0.0; batch.dim()];
    weighted_sum_into(profile.alpha(), batch, &mut t);
    let loo_mean = loo.mean();
    let value = t
        .iter()
        .zip(&loo_mean)
        .map(|(tv, lv)| n * tv - (n - 1.0) * lv)
        .collect();
    Ok(CentroidEstimate::fixed(value, Method::Jackknife))
}

/// Bootstrap correction `2 T_n - mean_b T_n^{*(b)}` with index resampling
/// drawn from `rng`.
pub fn bootstrap_centroid<R: Rng + ?Sized>(
    profile: &WeightProfile,
    batch: &Points,
    spec: &BootstrapSpec,
    rng: &mut R,
) -> Result<CentroidEstimate> {
    let n = batch.len();
    bootstrap_centroid_with(profile, batch, spec, |_| rng.random_range(0..n))
}

/// Bootstrap with a caller-supplied resampler: `pick(n)` returns an index in
/// `0..n` and is called `n` times per replicate.
///
/// Replicate weights reuse the already evaluated log weights; no kernel is
/// re-evaluated.
pub fn bootstrap_centroid_with<F: FnMut(usize) -> usize>(
    profile: &WeightProfile,
    batch: &Points,
    spec: &BootstrapSpec,
    mut pick: F,
) -> Result<CentroidEstimate> {
    check_pair(profile, batch)?;
    let n = batch.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: n,
        });
    }
    let dim = batch.dim();
    let log_w = profile.log_weights();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_w.iter().map(|&v| float::exp(v - max)).collect();

    let mut t = vec![0.0; dim];
    weighted_sum_into(profile.alpha(), batch, &mut t);

    let mut indices = vec![0usize; n];
    let mut replicate = vec![0.0; dim];
    let mut replicate_sum = vec![0.0; dim];
    for _ in 0..spec.replicates() {
        let mut top = 0.0f64;
        for slot in indices.iter_mut() {
            let j = pick(n);
            if j >= n {
                return Err(Error::invalid(
                    "bootstrap resampler returned an out-of-range index",
                ));
            }
            *slot = j;
            top = top.max(scaled[j]);
        }
        replicate.iter_mut().for_each(|r| *r = 0.0);
        let mut total = 0.0;
        if top >= BOOTSTRAP_RESCALE_FLOOR {
            for &j in &indices {
                let w = scaled[j];
                total += w;
                for (r, v) in replicate.iter_mut().zip(batch.row(j)) {
                    *r += w * v;
                }
            }
        } else {
            let local_max = indices
                .iter()
                .map(|&j| log_w[j])
                .fold(f64::NEG_INFINITY, f64::max);
            for &j in &indices {
                let w = float::exp(log_w[j] - local_max);
                total += w;
                for (r, v) in replicate.iter_mut().zip(batch.row(j)) {
                    *r += w * v;
                }
            }
        }
        for (s, r) in replicate_sum.iter_mut().zip(&replicate) {
            *s += r / total;
        }
    }
    let b = spec.replicates() as f64;
    let value = t
        .iter()
        .zip(&replicate_sum)
        .map(|(tv, s)| 2.0 * tv - s / b)
        .collect();
    Ok(CentroidEstimate::fixed(value, Method::Bootstrap))
}

/// BR-SNIS (iterated sampling-importance resampling) estimate at query `x`.
///
/// The chain state starts from one fresh draw. Each of the `K` iterations
/// pools the state with `n - 1` fresh draws, records the standard centroid of
/// that pool, and resamples the state in proportion to the softmax weights.
/// The estimate averages the centroids recorded after the first `k0`
/// iterations. `sampler` writes one reference draw into its argument and
/// returns `false` once exhausted. Consumes exactly `K(n-1)+1` draws.
pub fn brsnis_centroid<S, R>(
    x: &[f64],
    n: usize,
    mut sampler: S,
    spec: &BrSnisSpec,
    kernel: &KernelSpec,
    rng: &mut R,
) -> Result<CentroidEstimate>
where
    S: FnMut(&mut [f64]) -> bool,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let dim = x.len();
    let budget = spec.sample_budget(n);
    let mut drawn = 0usize;
    let mut pool = Points::zeros(n, dim)?;
    let mut draw = |row: &mut [f64], drawn: &mut usize| -> Result<()> {
        if !sampler(row) {
            return Err(Error::InsufficientSamples {
                needed: budget,
                available: *drawn,
            });
        }
        *drawn += 1;
        Ok(())
    };
    draw(pool.row_mut(0), &mut drawn)?;

    let mut profile: Option<WeightProfile> = None;
    let mut centroid = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    for k in 0..spec.iterations() {
        for i in 1..n {
            draw(pool.row_mut(i), &mut drawn)?;
        }
        let p = match profile.as_mut() {
            Some(p) => {
                p.reevaluate(x, &pool, kernel)?;
                p
            }
            None => profile.insert(WeightProfile::evaluate(x, &pool, kernel)?),
        };
        weighted_sum_into(p.alpha(), &pool, &mut centroid);
        if k >= spec.burn_in() {
            for (a, c) in acc.iter_mut().zip(&centroid) {
                *a += c;
            }
        }
        let next = categorical(p.alpha(), rng.random::<f64>());
        if next != 0 {
            pool.copy_row_to_front(next);
        }
    }
    let kept = (spec.iterations() - spec.burn_in()) as f64;
    acc.iter_mut().for_each(|a| *a /= kept);
    Ok(CentroidEstimate {
        value: acc,
        method: Method::Brsnis,
        extra_samples_consumed: budget - n,
    })
}

/// Inverse-CDF draw from normalized `weights` with `u` in `[0, 1)`.
fn categorical(weights: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cumulative += w;
        if u < cumulative {
            return i;
        }
    }
    // Rounding left the total just below u; fall back to the last positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
