//! Synthetic reference distributions, pools, queries and minibatch draws.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::streams;

/// Isotropic Gaussian mixture: pick a mode by `mode_probs`, then add
/// `sigma * N(0, I)` to its center.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    centers: Points,
    sigma: f64,
    mode_probs: Vec<f64>,
}

impl GaussianMixtureSpec {
    /// `mode_probs = None` means uniform over the centers.
    pub fn new(centers: Points, sigma: f64, mode_probs: Option<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid("mixture needs at least one center"));
        }
        if !centers.is_finite() {
            return Err(Error::invalid("mixture centers must be finite"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("mixture sigma must be positive and finite"));
        }
        let k = centers.len();
        let mode_probs = mode_probs.unwrap_or_else(|| alloc::vec![1.0 / k as f64; k]);
        if mode_probs.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: mode_probs.len(),
            });
        }
        if mode_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("mode probabilities must be nonnegative"));
        }
        let total: f64 = mode_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mode probabilities must sum to one"));
        }
        Ok(GaussianMixtureSpec {
            centers,
            sigma,
            mode_probs,
        })
    }

    /// Four equally likely modes at `(+-0.5, +-0.5)` with `sigma = 0.1`.
    pub fn four_mode() -> Self {
        let centers =
            Points::from_rows(&[[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]]).unwrap();
        GaussianMixtureSpec::new(centers, 0.1, None).unwrap()
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mode_probs(&self) -> &[f64] {
        &self.mode_probs
    }

    pub fn dim(&self) -> usize {
        self.centers.dim()
    }

    /// Draws one point into `out`, returning the chosen mode.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut mode = self.mode_probs.len() - 1;
        for (i, p) in self.mode_probs.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                mode = i;
                break;
            }
        }
        for (o, c) in out.iter_mut().zip(self.centers.row(mode)) {
            let z: f64 = StandardNormal.sample(rng);
            *o = c + self.sigma * z;
        }
        mode
    }
}

/// A finite pool of reference points standing in for the distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    pub points: Points,
    pub source_spec: GaussianMixtureSpec,
    pub seed: u64,
}

impl SamplePool {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }
}

impl AsRef<Points> for SamplePool {
    fn as_ref(&self) -> &Points {
        &self.points
    }
}

/// Draws `size` independent points from `spec`; a pure function of
/// `(spec, size, seed)`.
pub fn build_pool(spec: &GaussianMixtureSpec, size: usize, seed: u64) -> Result<SamplePool> {
    if size == 0 {
        return Err(Error::invalid("pool size must be positive"));
    }
    let mut rng = streams::seeded(seed);
    let mut points = Points::zeros(size, spec.dim())?;
    for i in 0..size {
        spec.sample_into(&mut rng, points.row_mut(i));
    }
    Ok(SamplePool {
        points,
        source_spec: spec.clone(),
        seed,
    })
}

/// Uniform indices into a pool of `pool_len` points, written to `out`.
pub fn draw_indices<R: Rng + ?Sized>(
    pool_len: usize,
    n: usize,
    replacement: bool,
    rng: &mut R,
    out: &mut Vec<usize>,
) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    out.clear();
    if replacement {
        if pool_len == 0 {
            return Err(Error::EmptyBatch);
        }
        out.extend((0..n).map(|_| rng.random_range(0..pool_len)));
    } else {
        if n > pool_len {
            return Err(Error::InsufficientSamples {
                needed: n,
                available: pool_len,
            });
        }
        out.extend(rand::seq::index::sample(rng, pool_len, n).iter());
    }
    Ok(())
}

/// An `n`-point minibatch from `pool`, with or without replacement.
pub fn draw_minibatch<R: Rng + ?Sized>(
    pool: &Points,
    n: usize,
    replacement: bool,
    rng: &mut R,
) -> Result<Points> {
    let mut idx = Vec::with_capacity(n);
    draw_indices(pool.len(), n, replacement, rng, &mut idx)?;
    Ok(pool.select(&idx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryScheme {
    /// Queries drawn from the reference mixture itself.
    FromP,
    /// `N(0, scale^2 I)` queries.
    IsotropicGaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: Points,
    pub scheme: QueryScheme,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

pub fn build_queries(
    scheme: QueryScheme,
    count: usize,
    spec: &GaussianMixtureSpec,
    seed: u64,
) -> Result<QuerySet> {
    if count == 0 {
        return Err(Error::invalid("query count must be positive"));
    }
    let mut rng = streams::seeded(seed);
    let mut queries = Points::zeros(count, spec.dim())?;
    match scheme {
        QueryScheme::FromP => {
            for i in 0..count {
                spec.sample_into(&mut rng, queries.row_mut(i));
            }
        }
        QueryScheme::IsotropicGaussian { scale } => {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(Error::invalid("query scale must be nonnegative"));
            }
            for v in queries.as_mut_slice() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z;
            }
        }
    }
    Ok(QuerySet { queries, scheme })
}
