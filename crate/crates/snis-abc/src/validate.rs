//! Property checks behind `snis-abc validate`.
//!
//! Each property runs a batch of seeded randomized cases (or a seeded Monte
//! Carlo experiment) and reports how many failed. `break_abc` swaps in a
//! deliberately wrong bias correction, `T_n + Delta_n`, to show the checks
//! can fail.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use snis_abc_core::estimators::{bootstrap_centroid, leave_one_out_centroids};
use snis_abc_core::streams::{keyed_stream, StreamRng};
use snis_abc_core::{
    abc_centroid, abc_weights, bias_corrected_norm, brsnis_centroid, build_pool, build_queries,
    draw_indices, effective_sample_size, jackknife_centroid, leading_bias, n1_bias,
    plugin_correction, standard_centroid, target_centroid, BootstrapSpec, BrSnisSpec, Error,
    GaussianMixtureSpec, KernelSpec, Method, Points, QueryScheme, TrialAggregate, WeightProfile,
};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::formats;
use crate::harness::{run_point, run_scaling_experiment, Experiment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Property {
    ZeroBias,
    ConvexHull,
    AbcRelation,
    JackknifeIdentity,
    N1Bias,
    LeadingConstant,
    AbcBias,
    SoftmaxShift,
    Equivariance,
    Lambda,
    Determinism,
}

impl Property {
    pub const ALL: [Property; 11] = [
        Property::ZeroBias,
        Property::ConvexHull,
        Property::AbcRelation,
        Property::JackknifeIdentity,
        Property::N1Bias,
        Property::LeadingConstant,
        Property::AbcBias,
        Property::SoftmaxShift,
        Property::Equivariance,
        Property::Lambda,
        Property::Determinism,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Property::ZeroBias => "zero-bias",
            Property::ConvexHull => "convex-hull",
            Property::AbcRelation => "abc-relation",
            Property::JackknifeIdentity => "jackknife-identity",
            Property::N1Bias => "n1-bias",
            Property::LeadingConstant => "leading-constant",
            Property::AbcBias => "abc-bias",
            Property::SoftmaxShift => "softmax-shift",
            Property::Equivariance => "equivariance",
            Property::Lambda => "lambda",
            Property::Determinism => "determinism",
        }
    }

    fn tag(&self) -> u64 {
        Property::ALL.iter().position(|p| p == self).unwrap_or(0) as u64 + 1
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Property {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Property::ALL.iter().map(Property::as_str).collect();
                HarnessError::Config(format!(
                    "unknown property `{s}` (known: {})",
                    known.join(", ")
                ))
            })
    }
}

/// Budgets and switches for the property suite.
#[derive(Debug, Clone)]
pub struct ValidateOptions {
    /// Randomized cases per algebraic property.
    pub cases: usize,
    pub seed: u64,
    pub workers: usize,
    pub break_abc: bool,
    /// Trials per fixture at `n = 8` for the zero-bias check.
    pub zero_bias_trials: usize,
    pub n1_trials: usize,
    pub n1_queries: usize,
    pub leading_queries: usize,
    pub leading_trials: usize,
    pub leading_n: Vec<usize>,
    /// Allowed relative gap between `n * b` and the leading-bias norm.
    pub leading_tolerance: f64,
    pub abc_bias_trials: usize,
    pub determinism_workers: Vec<usize>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            cases: 1000,
            seed: 20_240_601,
            workers: 1,
            break_abc: false,
            zero_bias_trials: 50_000,
            n1_trials: 200_000,
            n1_queries: 5,
            leading_queries: 20,
            leading_trials: 200_000,
            leading_n: vec![256],
            leading_tolerance: 0.15,
            abc_bias_trials: 20_000,
            determinism_workers: vec![1, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub property: Property,
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    /// Worst observed statistic, or the first failure.
    pub detail: String,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

pub fn run_properties(props: &[Property], opts: &ValidateOptions) -> Result<Vec<PropertyOutcome>> {
    props.iter().map(|&p| run_property(p, opts)).collect()
}

pub fn run_property(property: Property, opts: &ValidateOptions) -> Result<PropertyOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match property {
        Property::ZeroBias => zero_bias(opts),
        Property::ConvexHull => cases(property, opts, convex_hull_case),
        Property::AbcRelation => cases(property, opts, abc_relation_case),
        Property::JackknifeIdentity => cases(property, opts, jackknife_case),
        Property::N1Bias => n1(opts),
        Property::LeadingConstant => leading_constant(opts),
        Property::AbcBias => abc_bias(opts),
        Property::SoftmaxShift => cases(property, opts, shift_case),
        Property::Equivariance => cases(property, opts, equivariance_case),
        Property::Lambda => cases(property, opts, lambda_case),
        Property::Determinism => determinism(opts),
    })
}

/// Result of one randomized case.
enum Case {
    Pass,
    Skip,
    Fail(String),
}

fn cases(
    property: Property,
    opts: &ValidateOptions,
    case: fn(&mut StreamRng, &ValidateOptions) -> Case,
) -> Result<PropertyOutcome> {
    let results: Vec<Case> = (0..opts.cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_stream(opts.seed, property.tag(), i as u64, 0);
            case(&mut rng, opts)
        })
        .collect();
    let mut out = PropertyOutcome {
        property,
        checked: 0,
        skipped: 0,
        failures: 0,
        detail: String::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Case::Pass => out.checked += 1,
            Case::Skip => out.skipped += 1,
            Case::Fail(msg) => {
                out.checked += 1;
                out.failures += 1;
                if out.detail.is_empty() {
                    out.detail = format!("case {i}: {msg}");
                }
            }
        }
    }
    if out.failures == 0 {
        out.detail = format!("{} cases", out.checked);
    }
    Ok(out)
}

/// The bias correction under test.
fn abc_under_test(profile: &WeightProfile, batch: &Points, opts: &ValidateOptions) -> Vec<f64> {
    if opts.break_abc {
        let t = standard_centroid(profile, batch)
            .expect("matched batch")
            .value;
        let delta = plugin_correction(profile, batch).expect("matched batch");
        t.iter().zip(&delta).map(|(a, d)| a + d).collect()
    } else {
        abc_centroid(profile, batch).expect("matched batch").value
    }
}

struct RandomBatch {
    x: Vec<f64>,
    batch: Points,
    kernel: KernelSpec,
    /// Coordinate magnitude, for relative tolerances.
    scale: f64,
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Batches over many orders of magnitude, from near-uniform weights to a
/// single dominating point.
fn random_batch(rng: &mut StreamRng, min_n: usize) -> RandomBatch {
    let n = rng.random_range(min_n..=40);
    let dim = rng.random_range(1..=5);
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    let offset: Vec<f64> = (0..dim).map(|_| 2.0 * scale * normal(rng)).collect();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for o in &offset {
            data.push(o + scale * normal(rng));
        }
    }
    // A few exact duplicates.
    if n > 2 && rng.random_bool(0.2) {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        let src: Vec<f64> = data[j * dim..(j + 1) * dim].to_vec();
        data[i * dim..(i + 1) * dim].copy_from_slice(&src);
    }
    let x = offset
        .iter()
        .map(|o| o + 1.5 * scale * normal(rng))
        .collect();
    let tau = scale * 10f64.powf(rng.random_range(-1.5..1.0));
    let abs_max = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    RandomBatch {
        x,
        batch: Points::new(dim, data).expect("consistent shape"),
        kernel: KernelSpec::exponential(tau).expect("positive tau"),
        scale: abs_max.max(f64::MIN_POSITIVE),
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn convex_hull_case(rng: &mut StreamRng, opts: &ValidateOptions) -> Case {
    let c = random_batch(rng, 1);
    let profile = WeightProfile::evaluate(&c.x, &c.batch, &c.kernel).expect("finite batch");
    let gamma = abc_weights(&profile);
    if let Some(g) = gamma.iter().find(|&&g| g < 0.0) {
        return Case::Fail(format!("negative weight {g:e}"));
    }
    let total: f64 = gamma.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Case::Fail(format!("weights sum to 1 + {:e}", total - 1.0));
    }
    let value = abc_under_test(&profile, &c.batch, opts);
    let mut combo = vec![0.0; c.batch.dim()];
    for (g, y) in gamma.iter().zip(c.batch.rows()) {
        for (o, v) in combo.iter_mut().zip(y) {
            *o += g * v;
        }
    }
    let gap = max_gap(&value, &combo);
    if gap > 1e-10 * c.scale {
        return Case::Fail(format!("estimate is {gap:e} from its convex combination"));
    }
    if c.batch.dim() == 2 && !in_hull_2d(&c.batch, &value, 1e-10 * c.scale) {
        return Case::Fail(format!("{value:?} outside the batch hull"));
    }
    Case::Pass
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Point-in-hull test against the monotone-chain hull of `batch`.
pub fn in_hull_2d(batch: &Points, p: &[f64], tol: f64) -> bool {
    let mut pts: Vec<[f64; 2]> = batch.rows().map(|r| [r[0], r[1]]).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    let p = [p[0], p[1]];
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    if pts.len() == 1 {
        return dist(pts[0], p) <= tol;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        // Collinear: distance to the segment between the extremes.
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
        return dist([a[0] + t * ab[0], a[1] + t * ab[1]], p) <= tol;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        cross(a, b, p) >= -tol * dist(a, b)
    })
}

fn abc_relation_case(rng: &mut StreamRng, opts: &ValidateOptions) -> Case {
    let c = random_batch(rng, 1);
    let profile = WeightProfile::evaluate(&c.x, &c.batch, &c.kernel).expect("finite batch");
    let t = standard_centroid(&profile, &c.batch)
        .expect("matched")
        .value;
    // Delta recomputed directly from its definition.
    let mut delta = vec![0.0; c.batch.dim()];
    for (&a, y) in profile.alpha().iter().zip(c.batch.rows()) {
        for ((d, tv), v) in delta.iter_mut().zip(&t).zip(y) {
            *d += a * a * (tv - v);
        }
    }
    let expected: Vec<f64> = t.iter().zip(&delta).map(|(a, d)| a - d).collect();
    let got = abc_under_test(&profile, &c.batch, opts);
    let gap = max_gap(&got, &expected);
    if gap > 1e-10 * c.scale {
        return Case::Fail(format!("ABC differs from T_n - Delta_n by {gap:e}"));
    }
    Case::Pass
}

fn jackknife_case(rng: &mut StreamRng, _: &ValidateOptions) -> Case {
    let c = random_batch(rng, 2);
    let profile = WeightProfile::evaluate(&c.x, &c.batch, &c.kernel).expect("finite batch");
    let loo = match leave_one_out_centroids(&profile, &c.batch) {
        Ok(l) => l,
        Err(Error::DominatedWeight { .. }) => return Case::Skip,
        Err(e) => return Case::Fail(e.to_string()),
    };
    let n = c.batch.len();
    let mut compared = 0;
    for (i, &a) in profile.alpha().iter().enumerate() {
        if a > 0.9 {
            continue;
        }
        let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let reduced = c.batch.select(&rest);
        let p = WeightProfile::evaluate(&c.x, &reduced, &c.kernel).expect("finite batch");
        let brute = standard_centroid(&p, &reduced).expect("matched").value;
        let gap = max_gap(loo.row(i), &brute);
        if gap > 1e-10 * c.scale {
            return Case::Fail(format!("row {i}: closed form off by {gap:e}"));
        }
        compared += 1;
    }
    if compared == 0 {
        Case::Skip
    } else {
        Case::Pass
    }
}

fn shift_case(rng: &mut StreamRng, _: &ValidateOptions) -> Case {
    let n = rng.random_range(1..=64);
    let spread = 10f64.powf(rng.random_range(-2.0..3.0));
    let lw: Vec<f64> = (0..n).map(|_| -spread * rng.random::<f64>()).collect();
    let c = rng.random_range(-100.0..100.0);
    let a = WeightProfile::normalize(lw.clone()).expect("finite");
    let b = WeightProfile::normalize(lw.iter().map(|v| v + c).collect()).expect("finite");
    let gap = max_gap(a.alpha(), b.alpha());
    if gap > 1e-12 {
        return Case::Fail(format!("shift {c} moved alpha by {gap:e}"));
    }
    Case::Pass
}

/// Random orthogonal matrix by Gram-Schmidt, row-major.
fn random_rotation(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let mut q: Vec<f64> = (0..dim * dim).map(|_| normal(rng)).collect();
        let mut ok = true;
        for i in 0..dim {
            for j in 0..i {
                let dot: f64 = (0..dim).map(|k| q[i * dim + k] * q[j * dim + k]).sum();
                for k in 0..dim {
                    q[i * dim + k] -= dot * q[j * dim + k];
                }
            }
            let norm = (0..dim).map(|k| q[i * dim + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            (0..dim).for_each(|k| q[i * dim + k] /= norm);
        }
        if ok {
            return q;
        }
    }
}

fn apply(rot: &[f64], shift: &[f64], v: &[f64]) -> Vec<f64> {
    let dim = v.len();
    (0..dim)
        .map(|i| (0..dim).map(|k| rot[i * dim + k] * v[k]).sum::<f64>() + shift[i])
        .collect()
}

fn transform_points(rot: &[f64], shift: &[f64], pts: &Points) -> Points {
    let data = pts.rows().flat_map(|r| apply(rot, shift, r)).collect();
    Points::new(pts.dim(), data).expect("same shape")
}

fn all_estimates(
    x: &[f64],
    batch: &Points,
    reference: &Points,
    kernel: &KernelSpec,
    seed: u64,
    opts: &ValidateOptions,
) -> Vec<(Method, std::result::Result<Vec<f64>, Error>)> {
    let profile = WeightProfile::evaluate(x, batch, kernel).expect("finite batch");
    let n = batch.len();
    Method::ALL
        .iter()
        .map(|&m| {
            let v = match m {
                Method::Standard => standard_centroid(&profile, batch).map(|e| e.value),
                Method::Abc => Ok(abc_under_test(&profile, batch, opts)),
                Method::Jackknife => jackknife_centroid(&profile, batch).map(|e| e.value),
                Method::Bootstrap => {
                    let mut rng = keyed_stream(seed, 1, 0, 0);
                    let spec = BootstrapSpec::new(7).expect("positive");
                    bootstrap_centroid(&profile, batch, &spec, &mut rng).map(|e| e.value)
                }
                Method::Brsnis => {
                    let mut draws = keyed_stream(seed, 2, 0, 0);
                    let mut resample = keyed_stream(seed, 3, 0, 0);
                    let spec = BrSnisSpec::new(4, 1).expect("valid");
                    brsnis_centroid(
                        x,
                        n,
                        |out: &mut [f64]| {
                            out.copy_from_slice(
                                reference.row(draws.random_range(0..reference.len())),
                            );
                            true
                        },
                        &spec,
                        kernel,
                        &mut resample,
                    )
                    .map(|e| e.value)
                }
            };
            (m, v)
        })
        .collect()
}

fn equivariance_case(rng: &mut StreamRng, opts: &ValidateOptions) -> Case {
    let c = random_batch(rng, 2);
    let dim = c.batch.dim();
    let rot = if rng.random_bool(0.5) {
        random_rotation(rng, dim)
    } else {
        (0..dim * dim)
            .map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 })
            .collect()
    };
    let shift: Vec<f64> = (0..dim).map(|_| 3.0 * c.scale * normal(rng)).collect();
    let seed = rng.random();
    let x2 = apply(&rot, &shift, &c.x);
    let batch2 = transform_points(&rot, &shift, &c.batch);
    let base = all_estimates(&c.x, &c.batch, &c.batch, &c.kernel, seed, opts);
    let moved = all_estimates(&x2, &batch2, &batch2, &c.kernel, seed, opts);
    let profile = WeightProfile::evaluate(&c.x, &c.batch, &c.kernel).expect("finite batch");
    let (_, top) = profile.max_alpha();
    let n = c.batch.len() as f64;
    let reach = c.scale + shift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for ((m, a), (_, b)) in base.into_iter().zip(moved) {
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let expected = apply(&rot, &shift, &a);
                // Leave-one-out divides by 1 - alpha, which amplifies rounding.
                let cond = if m == Method::Jackknife {
                    n / (1.0 - top)
                } else {
                    1.0
                };
                let gap = max_gap(&expected, &b);
                if gap > 1e-9 * reach * cond {
                    return Case::Fail(format!("{m}: transformed output off by {gap:e}"));
                }
            }
            (Err(Error::DominatedWeight { .. }), Err(Error::DominatedWeight { .. })) => {}
            // Dominance right at the threshold may flip under rounding.
            (Err(Error::DominatedWeight { .. }), Ok(_))
            | (Ok(_), Err(Error::DominatedWeight { .. }))
                if (1.0 - top - snis_abc_core::estimators::JACKKNIFE_DOMINANCE_SLACK).abs()
                    < 1e-12 => {}
            (a, b) => return Case::Fail(format!("{m}: {a:?} vs {b:?}")),
        }
    }
    Case::Pass
}

fn lambda_case(rng: &mut StreamRng, _: &ValidateOptions) -> Case {
    let c = random_batch(rng, 1);
    let taus: Vec<f64> = {
        let mut t: Vec<f64> = (0..8)
            .map(|_| c.kernel.tau() * 10f64.powf(rng.random_range(-1.0..1.0)))
            .collect();
        t.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        t
    };
    let mut prev = 1.0;
    for tau in taus {
        let k = KernelSpec::exponential(tau).expect("positive");
        let ess = effective_sample_size(&c.x, &c.batch, &k, 16).expect("valid pool");
        if ess.lambda < 1.0 - 1e-12 {
            return Case::Fail(format!("lambda {} < 1", ess.lambda));
        }
        if ess.lambda < prev * (1.0 - 1e-12) {
            return Case::Fail(format!(
                "lambda fell from {prev} to {} at tau {tau}",
                ess.lambda
            ));
        }
        prev = ess.lambda;
    }
    Case::Pass
}

fn base_config(opts: &ValidateOptions, trials: usize, n_grid: Vec<usize>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.harness.trials = trials;
    cfg.harness.n_grid = n_grid;
    cfg.harness.methods = vec![Method::Standard];
    cfg.harness.master_seed = opts.seed;
    cfg.harness.record_timing = false;
    cfg.harness.replacement = true;
    cfg
}

/// Points on a circle (2-D) or sphere (3-D) around `x`, all at one distance.
fn sphere_fixture(x: &[f64], radius: f64, count: usize) -> Points {
    let mut data = Vec::with_capacity(count * x.len());
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..count {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
        let r = (1.0 - z * z).sqrt();
        let t = golden * i as f64;
        let dir = [r * t.cos(), r * t.sin(), z];
        data.extend(x.iter().zip(dir).map(|(c, d)| c + radius * d));
    }
    Points::new(x.len(), data).expect("consistent shape")
}

/// Pairs `y, 2x - y`.
fn symmetric_fixture(x: &[f64], count: usize, rng: &mut StreamRng) -> Points {
    let mut data = Vec::with_capacity(2 * count * x.len());
    for _ in 0..count {
        let y: Vec<f64> = x.iter().map(|c| c + 0.3 * normal(rng) + 0.1).collect();
        data.extend(&y);
        data.extend(x.iter().zip(&y).map(|(c, v)| 2.0 * c - v));
    }
    Points::new(x.len(), data).expect("consistent shape")
}

fn zero_bias(opts: &ValidateOptions) -> Result<PropertyOutcome> {
    let mut rng = keyed_stream(opts.seed, Property::ZeroBias.tag(), 0, 0);
    let x3 = [0.3, -0.2, 0.5];
    let x2 = [0.4, 0.1];
    let fixtures = [
        ("constant-weight", x3.to_vec(), sphere_fixture(&x3, 0.4, 64)),
        (
            "symmetric",
            x2.to_vec(),
            symmetric_fixture(&x2, 40, &mut rng),
        ),
    ];
    let mut out = PropertyOutcome {
        property: Property::ZeroBias,
        checked: 0,
        skipped: 0,
        failures: 0,
        detail: String::new(),
    };
    let mut notes = Vec::new();
    for (name, x, pool) in fixtures {
        let cfg = base_config(opts, opts.zero_bias_trials, vec![8]);
        let queries = Points::from_rows(&[x.as_slice()])?;
        let exp = Experiment::with_points(&cfg, pool, queries)?;
        let target = target_centroid(&x, &exp.pool, exp.kernel())?;
        let agg = run_point(&exp, 0, 8, Method::Standard)?.aggregate;
        let b = bias_corrected_norm(&agg, &target.value)?;
        let se = (b.total_variance / agg.count() as f64).sqrt();
        out.checked += 1;
        let ratio = b.corrected / se;
        notes.push(format!("{name}: b = {:.3e}, {ratio:.2} SE", b.corrected));
        if ratio >= 5.0 {
            out.failures += 1;
        }
    }
    out.detail = notes.join("; ");
    Ok(out)
}

fn toy_pool(size: usize, seed: u64) -> Result<Points> {
    Ok(build_pool(&GaussianMixtureSpec::four_mode(), size, seed)?.points)
}

fn toy_queries(count: usize, seed: u64) -> Result<Points> {
    Ok(build_queries(
        QueryScheme::FromP,
        count,
        &GaussianMixtureSpec::four_mode(),
        seed,
    )?
    .queries)
}

fn n1(opts: &ValidateOptions) -> Result<PropertyOutcome> {
    let cfg = base_config(opts, opts.n1_trials, vec![1]);
    let exp = Experiment::with_points(
        &cfg,
        toy_pool(100_000, opts.seed ^ 0x11)?,
        toy_queries(opts.n1_queries, opts.seed ^ 0x12)?,
    )?;
    let results: Vec<Result<(f64, f64)>> = (0..exp.queries.len())
        .into_par_iter()
        .map(|q| {
            let x = exp.queries.row(q);
            let target = target_centroid(x, &exp.pool, exp.kernel())?.value;
            let bias = n1_bias(x, &exp.pool, exp.kernel())?;
            let mean_y = exp.pool.mean();
            let identity = bias
                .iter()
                .zip(mean_y.iter().zip(&target))
                .fold(0.0f64, |m, (b, (y, t))| m.max((b - (y - t)).abs()));
            let agg = run_point(&exp, q, 1, Method::Standard)?.aggregate;
            let cov = agg.covariance()?;
            let dim = agg.dim();
            let mean = agg.mean();
            let z = (0..dim)
                .map(|d| {
                    let se = (cov[d * dim + d] / agg.count() as f64).sqrt();
                    (mean[d] - target[d] - bias[d]).abs() / se
                })
                .fold(0.0f64, f64::max);
            Ok((identity, z))
        })
        .collect();
    let mut out = PropertyOutcome {
        property: Property::N1Bias,
        checked: 0,
        skipped: 0,
        failures: 0,
        detail: String::new(),
    };
    let (mut worst_id, mut worst_z) = (0.0f64, 0.0f64);
    for r in results {
        let (id, z) = r?;
        out.checked += 1;
        if id > 1e-12 || z > 5.0 {
            out.failures += 1;
        }
        worst_id = worst_id.max(id);
        worst_z = worst_z.max(z);
    }
    out.detail = format!("identity gap {worst_id:.1e}, worst coordinate {worst_z:.2} SE");
    Ok(out)
}

/// Per-query leading-constant comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingCheck {
    pub query: usize,
    pub n: usize,
    /// `n * b_hat` for the standard estimator.
    pub scaled_bias: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

pub fn leading_constant_checks(opts: &ValidateOptions) -> Result<Vec<LeadingCheck>> {
    let cfg = base_config(opts, opts.leading_trials, opts.leading_n.clone());
    let exp = Experiment::with_points(
        &cfg,
        toy_pool(200_000, opts.seed ^ 0x21)?,
        toy_queries(opts.leading_queries, opts.seed ^ 0x22)?,
    )?;
    let per_query: Vec<Result<Vec<LeadingCheck>>> = (0..exp.queries.len())
        .into_par_iter()
        .map(|q| {
            let x = exp.queries.row(q);
            let target = target_centroid(x, &exp.pool, exp.kernel())?.value;
            let predicted = leading_bias(x, &exp.pool, exp.kernel())?.norm;
            opts.leading_n
                .iter()
                .map(|&n| {
                    let agg = run_point(&exp, q, n, Method::Standard)?.aggregate;
                    let b = bias_corrected_norm(&agg, &target)?;
                    let scaled_bias = n as f64 * b.corrected;
                    Ok(LeadingCheck {
                        query: q,
                        n,
                        scaled_bias,
                        predicted,
                        relative_error: (scaled_bias - predicted).abs() / predicted,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_query {
        out.extend(r?);
    }
    Ok(out)
}

fn leading_constant(opts: &ValidateOptions) -> Result<PropertyOutcome> {
    let checks = leading_constant_checks(opts)?;
    let worst = checks
        .iter()
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
        .cloned();
    let failures = checks
        .iter()
        .filter(|c| c.relative_error.is_nan() || c.relative_error > opts.leading_tolerance)
        .count();
    Ok(PropertyOutcome {
        property: Property::LeadingConstant,
        checked: checks.len(),
        skipped: 0,
        failures,
        detail: match worst {
            Some(w) => format!(
                "worst: query {} at n = {}: n*b = {:.4e} vs {:.4e} ({:.1}%)",
                w.query,
                w.n,
                w.scaled_bias,
                w.predicted,
                100.0 * w.relative_error
            ),
            None => "no queries".into(),
        },
    })
}

/// ABC bias never above the standard bias, averaged over queries, within
/// three combined standard errors. Runs its own trial loop so that
/// `break_abc` reaches it.
fn abc_bias(opts: &ValidateOptions) -> Result<PropertyOutcome> {
    let pool = toy_pool(20_000, opts.seed ^ 0x31)?;
    let queries = toy_queries(8, opts.seed ^ 0x32)?;
    let kernel = KernelSpec::exponential(0.1)?;
    let grid = [4usize, 8, 16, 32];
    let per_query: Vec<Result<Vec<[f64; 4]>>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let x = queries.row(q);
            let target = target_centroid(x, &pool, &kernel)?.value;
            grid.iter()
                .map(|&n| {
                    let mut std_agg = TrialAggregate::new(pool.dim());
                    let mut abc_agg = TrialAggregate::new(pool.dim());
                    let mut idx = Vec::new();
                    let mut batch = Points::with_capacity(pool.dim(), n)?;
                    for m in 0..opts.abc_bias_trials {
                        let mut rng = keyed_stream(opts.seed, q as u64, m as u64, n as u64);
                        draw_indices(pool.len(), n, true, &mut rng, &mut idx)?;
                        batch.gather_from(&pool, &idx)?;
                        let p = WeightProfile::evaluate(x, &batch, &kernel)?;
                        std_agg.push(&standard_centroid(&p, &batch)?.value);
                        abc_agg.push(&abc_under_test(&p, &batch, opts));
                    }
                    let s = bias_corrected_norm(&std_agg, &target)?;
                    let a = bias_corrected_norm(&abc_agg, &target)?;
                    Ok([s.corrected, s.std_error, a.corrected, a.std_error])
                })
                .collect()
        })
        .collect();
    let mut sums = vec![[0.0f64; 4]; grid.len()];
    for r in per_query {
        for (acc, v) in sums.iter_mut().zip(r?) {
            acc[0] += v[0];
            acc[1] += v[1] * v[1];
            acc[2] += v[2];
            acc[3] += v[3] * v[3];
        }
    }
    let qn = queries.len() as f64;
    let mut out = PropertyOutcome {
        property: Property::AbcBias,
        checked: 0,
        skipped: 0,
        failures: 0,
        detail: String::new(),
    };
    let mut notes = Vec::new();
    for (n, s) in grid.iter().zip(sums) {
        let (std_b, abc_b) = (s[0] / qn, s[2] / qn);
        let se = (s[1] + s[3]).sqrt() / qn;
        out.checked += 1;
        if abc_b > std_b + 3.0 * se {
            out.failures += 1;
        }
        notes.push(format!("n={n}: {abc_b:.2e} vs {std_b:.2e}"));
    }
    out.detail = notes.join(", ");
    Ok(out)
}

/// Serialized report bytes for one randomized tiny configuration.
fn report_bytes(cfg: &ExperimentConfig, workers: usize) -> std::result::Result<Vec<u8>, String> {
    let exp = Experiment::prepare(cfg).map_err(|e| e.to_string())?;
    let report = run_scaling_experiment(&exp, workers).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    formats::write_report_csv(&report, &mut bytes).map_err(|e| e.to_string())?;
    formats::write_per_query_csv(&report, &mut bytes).map_err(|e| e.to_string())?;
    formats::write_json_summary(&report, &mut bytes).map_err(|e| e.to_string())?;
    Ok(bytes)
}

fn random_tiny_config(rng: &mut StreamRng) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.pool.size = rng.random_range(20..300);
    cfg.pool.seed = rng.random();
    cfg.queries.count = rng.random_range(1..=4);
    cfg.queries.seed = rng.random();
    if rng.random_bool(0.5) {
        cfg.queries.scheme = crate::config::QuerySchemeName::IsotropicGaussian;
    }
    cfg.kernel.tau = rng.random_range(0.05..1.0);
    let mut grid: Vec<usize> = (0..rng.random_range(1..=4))
        .map(|_| rng.random_range(2..=16))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    cfg.harness.n_grid = grid;
    cfg.harness.trials = rng.random_range(2..=24);
    cfg.harness.methods = Method::ALL
        .into_iter()
        .filter(|_| rng.random_bool(0.6))
        .collect();
    if cfg.harness.methods.is_empty() {
        cfg.harness.methods.push(Method::Abc);
    }
    cfg.harness.replacement = rng.random_bool(0.5);
    cfg.harness.master_seed = rng.random();
    cfg.harness.record_timing = false;
    cfg.harness.fit_min_n = 2;
    cfg.bootstrap.replicates = rng.random_range(1..=6);
    cfg.brsnis.iterations = rng.random_range(2..=5);
    cfg.brsnis.burn_in = rng.random_range(0..cfg.brsnis.iterations);
    cfg
}

fn determinism(opts: &ValidateOptions) -> Result<PropertyOutcome> {
    let results: Vec<Option<String>> = (0..opts.cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_stream(opts.seed, Property::Determinism.tag(), i as u64, 0);
            let cfg = random_tiny_config(&mut rng);
            let first = report_bytes(&cfg, opts.determinism_workers[0]);
            for &w in &opts.determinism_workers[1..] {
                if report_bytes(&cfg, w) != first {
                    return Some(format!("case {i}: report differs at {w} workers"));
                }
            }
            None
        })
        .collect();
    let failures: Vec<String> = results.into_iter().flatten().collect();
    Ok(PropertyOutcome {
        property: Property::Determinism,
        checked: opts.cases,
        skipped: 0,
        failures: failures.len(),
        detail: failures
            .first()
            .cloned()
            .unwrap_or_else(|| format!("{} configurations", opts.cases)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ValidateOptions {
        ValidateOptions {
            cases: 60,
            zero_bias_trials: 4000,
            n1_trials: 4000,
            n1_queries: 2,
            leading_queries: 2,
            leading_trials: 2000,
            leading_n: vec![16],
            leading_tolerance: 10.0,
            abc_bias_trials: 1500,
            determinism_workers: vec![1, 3],
            ..ValidateOptions::default()
        }
    }

    #[test]
    fn names_round_trip() {
        for p in Property::ALL {
            assert_eq!(p.as_str().parse::<Property>().unwrap(), p);
        }
        assert!("hull".parse::<Property>().unwrap_err().is_usage());
    }

    #[test]
    fn hull_test_hand_cases() {
        let square = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(in_hull_2d(&square, &[0.5, 0.5], 0.0));
        assert!(in_hull_2d(&square, &[1.0, 0.5], 0.0));
        assert!(!in_hull_2d(&square, &[1.01, 0.5], 1e-9));
        let line = Points::from_rows(&[[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]]).unwrap();
        assert!(in_hull_2d(&line, &[0.5, 0.5], 1e-12));
        assert!(!in_hull_2d(&line, &[0.5, 0.6], 1e-12));
        let dot = Points::from_rows(&[[3.0, 3.0], [3.0, 3.0]]).unwrap();
        assert!(in_hull_2d(&dot, &[3.0, 3.0], 0.0));
        assert!(!in_hull_2d(&dot, &[3.0, 3.1], 1e-3));
    }

    #[test]
    fn quick_suite_passes() {
        for out in run_properties(&Property::ALL, &quick()).unwrap() {
            assert!(out.passed(), "{} failed: {}", out.property, out.detail);
        }
    }

    #[test]
    fn broken_abc_is_caught() {
        let opts = ValidateOptions {
            break_abc: true,
            ..quick()
        };
        let relation = run_property(Property::AbcRelation, &opts).unwrap();
        assert!(!relation.passed());
        let hull = run_property(Property::ConvexHull, &opts).unwrap();
        assert!(!hull.passed());
        let bias = run_property(Property::AbcBias, &opts).unwrap();
        assert!(!bias.passed(), "{}", bias.detail);
    }
}
