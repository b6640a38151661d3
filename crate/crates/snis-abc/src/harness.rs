//! Deterministic Monte Carlo engine.
//!
//! Work is split by query. Every random draw comes from a stream keyed by
//! `(master_seed, query, trial, purpose)`, so a report is a pure function of
//! the configuration whatever the worker count. Within a trial all
//! fixed-batch methods see the same minibatch.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use snis_abc_core::estimators::bootstrap_centroid;
use snis_abc_core::streams::keyed_stream;
use snis_abc_core::{
    abc_centroid, bias_corrected_norm, brsnis_centroid, build_pool, build_queries, draw_indices,
    fit_slope, jackknife_centroid, leading_bias, standard_centroid, target_centroid, Error,
    KernelSpec, Method, Points, TrialAggregate, WeightProfile,
};

use crate::config::{ExperimentConfig, ResolvedSpecs};
use crate::error::{HarnessError, Result};

/// Purpose tags mixed into stream keys.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Batch = 1,
    JackknifeRetry = 2,
    Bootstrap = 3,
    BrsnisDraws = 4,
    BrsnisResample = 5,
}

fn stream_tag(n: usize, purpose: Purpose) -> u64 {
    ((n as u64) << 8) | purpose as u64
}

/// A prepared experiment: resolved specs, reference pool and queries.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub specs: ResolvedSpecs,
    pub pool: Points,
    pub queries: Points,
}

impl Experiment {
    /// Builds the pool and queries described by `config`.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let specs = config.validate()?;
        let pool = build_pool(&specs.mixture, config.pool.size, config.pool.seed)?;
        let queries = build_queries(
            specs.scheme,
            config.queries.count,
            &specs.mixture,
            config.queries.seed,
        )?;
        Ok(Experiment {
            config: config.clone(),
            specs,
            pool: pool.points,
            queries: queries.queries,
        })
    }

    /// Uses an explicit pool and query set instead of the configured mixture.
    pub fn with_points(config: &ExperimentConfig, pool: Points, queries: Points) -> Result<Self> {
        let specs = config.validate()?;
        if pool.is_empty() || queries.is_empty() {
            return Err(HarnessError::Config(
                "pool and queries must be nonempty".into(),
            ));
        }
        if pool.dim() != queries.dim() {
            return Err(HarnessError::Config(
                "pool and query dimensions differ".into(),
            ));
        }
        if !config.harness.replacement {
            if let Some(&max_n) = config.harness.n_grid.last() {
                if max_n > pool.len() {
                    return Err(HarnessError::Config(format!(
                        "n = {max_n} exceeds the pool size without replacement"
                    )));
                }
            }
        }
        Ok(Experiment {
            config: config.clone(),
            specs,
            pool,
            queries,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.specs.kernel
    }

    pub fn samples_per_estimate(&self, method: Method, n: usize) -> usize {
        match method {
            Method::Brsnis => self.specs.brsnis.sample_budget(n),
            _ => n,
        }
    }
}

/// Trials of one method at one `(query, n)` point.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub method: Method,
    pub aggregate: TrialAggregate,
    /// Minibatch redraws after estimator rejections.
    pub retries: u64,
}

/// Runs all configured trials of `method` at query `query` and batch size `n`.
pub fn run_point(exp: &Experiment, query: usize, n: usize, method: Method) -> Result<PointOutcome> {
    let mut out = run_methods_at(exp, query, n, &[method])?;
    Ok(out.remove(0))
}

/// Runs several methods trial by trial, interleaved so their timings share
/// machine conditions. Each method's results equal its own [`run_point`].
pub fn run_methods_at(
    exp: &Experiment,
    query: usize,
    n: usize,
    methods: &[Method],
) -> Result<Vec<PointOutcome>> {
    let h = &exp.config.harness;
    let x = exp.queries.row(query);
    let dim = exp.pool.dim();
    let kernel = exp.kernel();
    let seed = h.master_seed;
    let timing = h.record_timing;
    let q = query as u64;

    let mut outcomes: Vec<PointOutcome> = methods
        .iter()
        .map(|&method| PointOutcome {
            method,
            aggregate: TrialAggregate::new(dim),
            retries: 0,
        })
        .collect();
    let needs_batch = methods.iter().any(Method::uses_fixed_batch);

    let mut indices = Vec::with_capacity(n);
    let mut batch = Points::with_capacity(dim, n)?;
    let mut profile = WeightProfile::normalize(vec![0.0])?;
    let mut retry_batch = Points::with_capacity(dim, n)?;
    let mut retry_profile = WeightProfile::normalize(vec![0.0])?;
    let mut brsnis_row = vec![0.0; dim];

    for trial in 0..h.trials {
        let m = trial as u64;
        if needs_batch {
            let mut rng = keyed_stream(seed, q, m, stream_tag(n, Purpose::Batch));
            draw_indices(exp.pool.len(), n, h.replacement, &mut rng, &mut indices)?;
            batch.gather_from(&exp.pool, &indices)?;
            if !timing {
                profile.reevaluate(x, &batch, kernel)?;
            }
        }
        for outcome in outcomes.iter_mut() {
            let start = timing.then(Instant::now);
            let value = match outcome.method {
                Method::Standard => {
                    if timing {
                        profile.reevaluate(x, &batch, kernel)?;
                    }
                    standard_centroid(&profile, &batch)?.value
                }
                Method::Abc => {
                    if timing {
                        profile.reevaluate(x, &batch, kernel)?;
                    }
                    abc_centroid(&profile, &batch)?.value
                }
                Method::Jackknife => {
                    if timing {
                        profile.reevaluate(x, &batch, kernel)?;
                    }
                    match jackknife_centroid(&profile, &batch) {
                        Ok(est) => est.value,
                        Err(Error::DominatedWeight { .. }) => {
                            let mut rng =
                                keyed_stream(seed, q, m, stream_tag(n, Purpose::JackknifeRetry));
                            let mut attempt = 0usize;
                            loop {
                                if attempt == h.retry_cap {
                                    let last = jackknife_centroid(&retry_profile, &retry_batch)
                                        .err()
                                        .unwrap_or(Error::EmptyBatch);
                                    return Err(HarnessError::RetryCapExceeded {
                                        method: Method::Jackknife,
                                        query,
                                        n,
                                        trial,
                                        cap: h.retry_cap,
                                        last,
                                    });
                                }
                                attempt += 1;
                                outcome.retries += 1;
                                draw_indices(
                                    exp.pool.len(),
                                    n,
                                    h.replacement,
                                    &mut rng,
                                    &mut indices,
                                )?;
                                retry_batch.gather_from(&exp.pool, &indices)?;
                                retry_profile.reevaluate(x, &retry_batch, kernel)?;
                                match jackknife_centroid(&retry_profile, &retry_batch) {
                                    Ok(est) => break est.value,
                                    Err(Error::DominatedWeight { .. }) => continue,
                                    Err(e) => return Err(e.into()),
                                }
                            }
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                Method::Bootstrap => {
                    if timing {
                        profile.reevaluate(x, &batch, kernel)?;
                    }
                    let mut rng = keyed_stream(seed, q, m, stream_tag(n, Purpose::Bootstrap));
                    bootstrap_centroid(&profile, &batch, &exp.specs.bootstrap, &mut rng)?.value
                }
                Method::Brsnis => {
                    let mut draws = keyed_stream(seed, q, m, stream_tag(n, Purpose::BrsnisDraws));
                    let mut resample =
                        keyed_stream(seed, q, m, stream_tag(n, Purpose::BrsnisResample));
                    let pool = &exp.pool;
                    let row = &mut brsnis_row;
                    brsnis_centroid(
                        x,
                        n,
                        |out: &mut [f64]| {
                            let j = draws.random_range(0..pool.len());
                            row.copy_from_slice(pool.row(j));
                            out.copy_from_slice(row);
                            true
                        },
                        &exp.specs.brsnis,
                        kernel,
                        &mut resample,
                    )?
                    .value
                }
            };
            if let Some(start) = start {
                let elapsed = start.elapsed().as_nanos() as u64;
                if trial >= h.warmup_skip {
                    outcome.aggregate.record_time_ns(elapsed);
                }
            }
            outcome.aggregate.push(&value);
        }
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    /// Variance-corrected bias norms, log-log slope fits.
    Scaling,
    /// Naive bias norms, Table-style comparison across methods.
    Baselines,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub pool: u64,
    pub queries: u64,
    pub master: u64,
}

/// Per-query statistics at one `(n, method)` point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub query: usize,
    pub n: usize,
    pub method: Method,
    pub bias_corrected: f64,
    pub bias_naive: f64,
    pub std_error: f64,
    pub total_variance: f64,
    pub clamped: bool,
    pub retries: u64,
    pub mean_time_us: Option<f64>,
    /// `|leading bias| / n` from the full pool; the first-order prediction
    /// for the standard estimator.
    pub predicted_standard_bias: f64,
}

/// Query-averaged statistics at one `(n, method)` point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub n: usize,
    pub method: Method,
    pub bias_corrected: f64,
    /// Standard error of the query-averaged `bias_corrected`.
    pub bias_corrected_se: f64,
    pub bias_naive: f64,
    pub total_variance: f64,
    pub mean_time_us: Option<f64>,
    /// Queries whose corrected squared norm was negative and clamped to zero.
    pub clamped_count: usize,
    pub retries: u64,
    pub samples_per_estimate: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeEntry {
    pub method: Method,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub stderr: Option<f64>,
    pub fitted_n: Vec<usize>,
    /// Sizes at or above the fit threshold left out because their mean bias
    /// was not positive.
    pub excluded_n: Vec<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub kind: ReportKind,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub rows: Vec<ReportRow>,
    pub slopes: Vec<SlopeEntry>,
    pub per_query: Vec<QueryRow>,
}

impl ScalingReport {
    pub fn row(&self, n: usize, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.n == n && r.method == method)
    }

    pub fn slope(&self, method: Method) -> Option<&SlopeEntry> {
        self.slopes.iter().find(|s| s.method == method)
    }

    /// The bias column this report is about: corrected for scaling runs,
    /// naive for baseline comparisons.
    pub fn reported_bias(&self, row: &ReportRow) -> f64 {
        match self.kind {
            ReportKind::Scaling => row.bias_corrected,
            ReportKind::Baselines => row.bias_naive,
        }
    }
}

fn query_rows(exp: &Experiment, query: usize) -> Result<Vec<QueryRow>> {
    let x = exp.queries.row(query);
    let target = target_centroid(x, &exp.pool, exp.kernel())?;
    let leading = leading_bias(x, &exp.pool, exp.kernel())?;
    let h = &exp.config.harness;
    let mut rows = Vec::with_capacity(h.n_grid.len() * h.methods.len());
    for &n in &h.n_grid {
        for outcome in run_methods_at(exp, query, n, &h.methods)? {
            let agg = &outcome.aggregate;
            let (corrected, naive, std_error, total_variance, clamped) = if agg.count() >= 2 {
                let b = bias_corrected_norm(agg, &target.value)?;
                (
                    b.corrected,
                    b.naive,
                    b.std_error,
                    b.total_variance,
                    b.clamped,
                )
            } else {
                // A single trial has no scatter to correct for.
                let naive = agg
                    .mean()
                    .iter()
                    .zip(&target.value)
                    .map(|(a, t)| (a - t) * (a - t))
                    .sum::<f64>()
                    .sqrt();
                (naive, naive, 0.0, 0.0, false)
            };
            rows.push(QueryRow {
                query,
                n,
                method: outcome.method,
                bias_corrected: corrected,
                bias_naive: naive,
                std_error,
                total_variance,
                clamped,
                retries: outcome.retries,
                mean_time_us: agg.mean_time_ns().map(|t| t / 1e3),
                predicted_standard_bias: leading.norm / n as f64,
            });
        }
    }
    Ok(rows)
}

fn run(exp: &Experiment, kind: ReportKind, workers: usize) -> Result<ScalingReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let per_query: Vec<QueryRow> = pool
        .install(|| {
            (0..exp.queries.len())
                .into_par_iter()
                .map(|q| query_rows(exp, q))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .flatten()
        .collect();

    let h = &exp.config.harness;
    let queries = exp.queries.len() as f64;
    let mut rows = Vec::new();
    for &n in &h.n_grid {
        for &method in &h.methods {
            let sel: Vec<&QueryRow> = per_query
                .iter()
                .filter(|r| r.n == n && r.method == method)
                .collect();
            let mean =
                |f: &dyn Fn(&QueryRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / queries;
            let mean_time_us = sel
                .iter()
                .map(|r| r.mean_time_us)
                .sum::<Option<f64>>()
                .map(|t| t / queries);
            rows.push(ReportRow {
                n,
                method,
                bias_corrected: mean(&|r| r.bias_corrected),
                bias_corrected_se: sel
                    .iter()
                    .map(|r| r.std_error * r.std_error)
                    .sum::<f64>()
                    .sqrt()
                    / queries,
                bias_naive: mean(&|r| r.bias_naive),
                total_variance: mean(&|r| r.total_variance),
                mean_time_us,
                clamped_count: sel.iter().filter(|r| r.clamped).count(),
                retries: sel.iter().map(|r| r.retries).sum(),
                samples_per_estimate: exp.samples_per_estimate(method, n),
                trials: h.trials,
            });
        }
    }

    let mut report = ScalingReport {
        kind,
        config: exp.config.clone(),
        seeds: Seeds {
            pool: exp.config.pool.seed,
            queries: exp.config.queries.seed,
            master: h.master_seed,
        },
        rows,
        slopes: Vec::new(),
        per_query,
    };
    report.slopes = h
        .methods
        .iter()
        .map(|&m| fit_method_slope(&report, m, h.fit_min_n))
        .collect();
    Ok(report)
}

fn fit_method_slope(report: &ScalingReport, method: Method, min_n: usize) -> SlopeEntry {
    let mut fitted_n = Vec::new();
    let mut excluded_n = Vec::new();
    let mut points = Vec::new();
    for row in report
        .rows
        .iter()
        .filter(|r| r.method == method && r.n >= min_n)
    {
        let b = report.reported_bias(row);
        if b > 0.0 {
            fitted_n.push(row.n);
            points.push((row.n as f64, b));
        } else {
            excluded_n.push(row.n);
        }
    }
    match fit_slope(&points) {
        Ok(fit) => SlopeEntry {
            method,
            slope: Some(fit.slope),
            intercept: Some(fit.intercept),
            stderr: Some(fit.stderr),
            fitted_n,
            excluded_n,
            note: None,
        },
        Err(e) => SlopeEntry {
            method,
            slope: None,
            intercept: None,
            stderr: None,
            fitted_n,
            excluded_n,
            note: Some(format!("no fit: {e}")),
        },
    }
}

/// Bias-scaling experiment: variance-corrected bias norms averaged over
/// queries, plus log-log slopes per method.
pub fn run_scaling_experiment(exp: &Experiment, workers: usize) -> Result<ScalingReport> {
    run(exp, ReportKind::Scaling, workers)
}

/// Baseline comparison: naive bias norms, total variance and per-estimate
/// wall time for every configured method.
pub fn run_baseline_comparison(exp: &Experiment, workers: usize) -> Result<ScalingReport> {
    let methods = &exp.config.harness.methods;
    if !methods.contains(&Method::Standard) || methods.len() < 2 {
        return Err(HarnessError::Config(
            "baseline comparison needs standard plus at least one correction".into(),
        ));
    }
    run(exp, ReportKind::Baselines, workers)
}
