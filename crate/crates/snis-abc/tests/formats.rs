use snis_abc::config::ExperimentConfig;
use snis_abc::formats::{
    read_points, write_baselines_csv, write_json_summary, write_loglog, write_points,
    write_report_csv, PointsKind, BASELINES_HEADER, REPORT_HEADER,
};
use snis_abc::harness::{run_scaling_experiment, Experiment};
use snis_abc::ScalingReport;
use snis_abc_core::{build_pool, GaussianMixtureSpec};

fn report() -> ScalingReport {
    let cfg = ExperimentConfig::default()
        .with_overrides(&[
            "pool.size=500",
            "queries.count=2",
            "harness.trials=30",
            "harness.n_grid=[2, 4, 8]",
            "harness.fit_min_n=2",
        ])
        .unwrap();
    run_scaling_experiment(&Experiment::prepare(&cfg).unwrap(), 1).unwrap()
}

#[test]
fn report_csv_parses_back() {
    let r = report();
    let mut buf = Vec::new();
    write_report_csv(&r, &mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        REPORT_HEADER
    );
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), r.rows.len());
    for (rec, row) in rows.iter().zip(&r.rows) {
        assert_eq!(rec[0].parse::<usize>().unwrap(), row.n);
        assert_eq!(&rec[1], row.method.as_str());
        assert_eq!(rec[2].parse::<f64>().unwrap(), row.bias_corrected);
        assert_eq!(&rec[5], "");
    }
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().count() == rows.len() + 1 && text.contains("\r\n"));
}

#[test]
fn baselines_csv_header() {
    let mut buf = Vec::new();
    write_baselines_csv(&report(), &mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        BASELINES_HEADER
    );
}

#[test]
fn json_summary_has_config_slopes_and_seeds() {
    let r = report();
    let mut buf = Vec::new();
    write_json_summary(&r, &mut buf).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(v["kind"], "scaling");
    assert_eq!(v["seeds"]["master"], r.config.harness.master_seed);
    assert_eq!(v["config"]["pool"]["size"], 500);
    let slopes = v["slopes"].as_array().unwrap();
    assert_eq!(slopes.len(), 2);
    assert!(slopes[0]["stderr"].is_number() || slopes[0]["stderr"].is_null());
    assert_eq!(slopes[0]["method"], "standard");
}

#[test]
fn loglog_blocks_per_method() {
    let r = report();
    let mut buf = Vec::new();
    write_loglog(&r, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let blocks: Vec<&str> = text.split("\n\n\n").collect();
    assert_eq!(blocks.len(), 2);
    assert!(blocks[0].contains("# standard") && blocks[1].contains("# abc"));
    let first = blocks[0].lines().find(|l| !l.starts_with('#')).unwrap();
    let cols: Vec<f64> = first.split(' ').map(|c| c.parse().unwrap()).collect();
    assert!((cols[0] - 2f64.log10()).abs() < 1e-15);
}

#[test]
fn pool_file_round_trip() {
    let spec = GaussianMixtureSpec::four_mode();
    let pool = build_pool(&spec, 1000, 5).unwrap();
    let meta = serde_json::json!({"sigma": spec.sigma(), "centers": spec.centers().as_slice()});
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.bin");
    write_points(
        std::fs::File::create(&path).unwrap(),
        PointsKind::Pool,
        pool.seed,
        &meta,
        &pool.points,
    )
    .unwrap();
    let back = read_points(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.points, pool.points);
    assert_eq!(back.seed, 5);
    assert_eq!(back.spec, meta);
}
