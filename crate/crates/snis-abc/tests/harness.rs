use snis_abc::config::ExperimentConfig;
use snis_abc::harness::{run_point, run_scaling_experiment, Experiment};
use snis_abc_core::{bias_corrected_norm, target_centroid, Method, Points};

fn small(extra: &[&str]) -> ExperimentConfig {
    let base = [
        "pool.size=3000",
        "queries.count=4",
        "harness.trials=400",
        "harness.n_grid=[4, 8, 16, 32]",
        "harness.methods=[\"standard\", \"abc\"]",
        "harness.fit_min_n=4",
    ];
    let all: Vec<&str> = base.iter().chain(extra).copied().collect();
    ExperimentConfig::default().with_overrides(&all).unwrap()
}

#[test]
fn report_is_reproducible() {
    let exp = Experiment::prepare(&small(&[])).unwrap();
    let a = run_scaling_experiment(&exp, 2).unwrap();
    let b = run_scaling_experiment(&Experiment::prepare(&small(&[])).unwrap(), 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_invariants() {
    let exp = Experiment::prepare(&small(&[])).unwrap();
    let r = run_scaling_experiment(&exp, 1).unwrap();
    assert_eq!(r.rows.len(), 8);
    assert_eq!(r.per_query.len(), 4 * 8);
    for row in &r.per_query {
        assert!(row.bias_corrected <= row.bias_naive + 1e-12);
        assert!(row.total_variance >= 0.0);
        assert!(row.mean_time_us.is_none());
    }
    for row in &r.rows {
        assert!(row.bias_corrected <= row.bias_naive + 1e-12);
        assert_eq!(row.samples_per_estimate, row.n);
    }
    let std = r.slope(Method::Standard).unwrap();
    assert_eq!(std.fitted_n, [4, 8, 16, 32]);
    assert!(std.slope.unwrap() < -0.5);
}

#[test]
fn seed_changes_values_only() {
    let a = run_scaling_experiment(&Experiment::prepare(&small(&[])).unwrap(), 1).unwrap();
    let b = run_scaling_experiment(
        &Experiment::prepare(&small(&["harness.master_seed=77"])).unwrap(),
        1,
    )
    .unwrap();
    assert_ne!(a.rows, b.rows);
    assert_eq!(b.seeds.master, 77);
    assert_eq!(a.seeds.pool, b.seeds.pool);
}

#[test]
fn symmetric_fixture_shows_no_bias() {
    // Pairs y, 2x - y around the query: the expected centroid is x itself.
    let x = [0.1, -0.2];
    let offsets = [
        [0.3, 0.05],
        [-0.1, 0.4],
        [0.25, -0.3],
        [0.6, 0.2],
        [0.02, 0.11],
    ];
    let mut rows = Vec::new();
    for o in offsets {
        rows.push([x[0] + o[0], x[1] + o[1]]);
        rows.push([x[0] - o[0], x[1] - o[1]]);
    }
    let pool = Points::from_rows(&rows).unwrap();
    let queries = Points::from_rows(&[x]).unwrap();
    let cfg = small(&["harness.trials=20000", "harness.n_grid=[3, 8]"]);
    let exp = Experiment::with_points(&cfg, pool, queries).unwrap();
    let target = target_centroid(&x, &exp.pool, exp.kernel()).unwrap();
    for n in [3, 8] {
        let agg = run_point(&exp, 0, n, Method::Standard).unwrap().aggregate;
        let b = bias_corrected_norm(&agg, &target.value).unwrap();
        let se = (b.total_variance / agg.count() as f64).sqrt();
        assert!(b.corrected < 5.0 * se, "n={n}: {b:?}");
    }
}

#[test]
fn brsnis_reports_its_sample_budget() {
    let cfg = small(&[
        "harness.methods=[\"standard\", \"brsnis\"]",
        "harness.trials=20",
        "brsnis.iterations=5",
    ]);
    let r = run_scaling_experiment(&Experiment::prepare(&cfg).unwrap(), 1).unwrap();
    assert_eq!(
        r.row(8, Method::Brsnis).unwrap().samples_per_estimate,
        5 * 7 + 1
    );
    assert_eq!(r.row(8, Method::Standard).unwrap().samples_per_estimate, 8);
}
