//! Self-normalized softmax-weighted centroid estimation.
//!
//! Given a query `x` and a minibatch `y_1..y_n`, the minibatch centroid
//! `T_n = sum_i alpha_i y_i` with `alpha_i = k(x, y_i) / sum_j k(x, y_j)` is a
//! ratio of two sample means and carries an `O(1/n)` bias relative to the
//! target centroid `T* = E[k y] / E[k]`. This crate provides:
//!
//! * [`kernel`]: log-domain kernel weights and softmax normalization.
//! * [`estimators`]: the standard centroid, the analytical bias correction
//!   (ABC), and the jackknife, bootstrap and BR-SNIS baselines.
//! * [`distributions`]: Gaussian-mixture reference pools, query sets and
//!   minibatch sampling.
//! * [`oracle`]: full-pool ground truth (target centroid, exact `n = 1` bias,
//!   leading-order bias, effective sample size).
//! * [`stats`]: Monte Carlo aggregation, the variance-corrected bias norm and
//!   log-log slope fitting.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature; math functions then come from `libm`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod distributions;
pub mod error;
pub mod estimators;
mod float;
pub mod kernel;
pub mod oracle;
pub mod points;
pub mod stats;
pub mod streams;

pub use distributions::{
    build_pool, build_queries, draw_indices, draw_minibatch, GaussianMixtureSpec, QueryScheme,
    QuerySet, SamplePool,
};
pub use error::{Error, Result};
pub use estimators::{
    abc_centroid, abc_weights, bootstrap_centroid, brsnis_centroid, jackknife_centroid,
    leave_one_out_centroids, plugin_correction, standard_centroid, BootstrapSpec, BrSnisSpec,
    CentroidEstimate, Method,
};
pub use kernel::{eval_log_weights, KernelFamily, KernelSpec, WeightProfile};
pub use oracle::{
    effective_sample_size, leading_bias, n1_bias, target_centroid, EffectiveSampleSize,
    LeadingBias, TargetCentroid,
};
pub use points::Points;
pub use stats::{bias_corrected_norm, fit_slope, BiasNorm, SlopeFit, TrialAggregate};
