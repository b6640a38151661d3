use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snis_abc::demo::{run_demo, write_demo_csv, DemoOptions};
use snis_abc::formats::{
    write_baselines_csv, write_file_atomic, write_json_summary, write_loglog, write_per_query_csv,
    write_report_csv,
};
use snis_abc::harness::{run_baseline_comparison, run_scaling_experiment, Experiment};
use snis_abc::validate::{run_property, Property, ValidateOptions};
use snis_abc::{ExperimentConfig, HarnessError, Result, ScalingReport};

#[derive(Parser)]
#[command(
    name = "snis-abc",
    version,
    about = "Bias of self-normalized softmax centroids: experiments and checks"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Master seed for trial streams.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads [default: available cores].
    #[arg(long, global = true, env = "SNIS_ABC_WORKERS", value_name = "N")]
    workers: Option<usize>,
    /// Config overrides as dot paths, e.g. `harness.trials=1 harness.n_grid=[4]`.
    #[arg(long, global = true, num_args = 1.., value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Bias-norm scaling in n, with log-log slope fits.
    Scaling,
    /// Bias, variance and wall time of every configured correction.
    Baselines,
    /// Run the property suite.
    Validate {
        /// Comma-separated subset of properties.
        #[arg(long, value_delimiter = ',')]
        properties: Vec<String>,
        /// Flip the sign of the ABC correction to check that the suite notices.
        #[arg(long)]
        break_abc: bool,
        /// Randomized cases per property.
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Write the three-cluster illustration to `demo_points.csv`.
    Demo {
        /// Monte Carlo minibatches behind the printed comparison.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
}

fn workers(global: &Global) -> usize {
    global.workers.filter(|&w| w > 0).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn load_config(global: &Global) -> Result<ExperimentConfig> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?.with_overrides(&global.overrides)?;
    if let Some(seed) = global.seed {
        cfg.harness.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn print_rows(report: &ScalingReport) {
    for r in &report.rows {
        let time = r
            .mean_time_us
            .map(|t| format!("{t:.1} us"))
            .unwrap_or_else(|| "-".into());
        println!(
            "n={:<5} {:<10} bias={:.3e} var={:.3e} time={time}",
            r.n,
            r.method.as_str(),
            report.reported_bias(r),
            r.total_variance
        );
    }
}

fn scaling(global: &Global) -> Result<ExitCode> {
    let cfg = load_config(global)?;
    let exp = Experiment::prepare(&cfg)?;
    let report = run_scaling_experiment(&exp, workers(global))?;
    create_out(&global.out)?;
    write_file_atomic(&global.out.join("scaling.csv"), |w| {
        write_report_csv(&report, w)
    })?;
    write_file_atomic(&global.out.join("scaling_per_query.csv"), |w| {
        write_per_query_csv(&report, w)
    })?;
    write_file_atomic(&global.out.join("scaling.json"), |w| {
        write_json_summary(&report, w)
    })?;
    write_file_atomic(&global.out.join("scaling_loglog.dat"), |w| {
        write_loglog(&report, w)
    })?;
    print_rows(&report);
    for s in &report.slopes {
        match (s.slope, s.stderr) {
            (Some(slope), Some(se)) => {
                println!("slope {:<10} {slope:+.3} +/- {se:.3}", s.method.as_str())
            }
            _ => println!(
                "slope {:<10} n/a ({})",
                s.method.as_str(),
                s.note.as_deref().unwrap_or("")
            ),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn baselines(global: &Global) -> Result<ExitCode> {
    let cfg = load_config(global)?;
    let exp = Experiment::prepare(&cfg)?;
    let report = run_baseline_comparison(&exp, workers(global))?;
    create_out(&global.out)?;
    write_file_atomic(&global.out.join("baselines.csv"), |w| {
        write_baselines_csv(&report, w)
    })?;
    write_file_atomic(&global.out.join("baselines.json"), |w| {
        write_json_summary(&report, w)
    })?;
    print_rows(&report);
    Ok(ExitCode::SUCCESS)
}

fn validate(
    global: &Global,
    names: &[String],
    break_abc: bool,
    cases: Option<usize>,
) -> Result<ExitCode> {
    if global.config.is_some() || !global.overrides.is_empty() {
        // Only checked for syntax; the suite builds its own fixtures.
        load_config(global)?;
    }
    let props = if names.is_empty() {
        Property::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<Property>>>()?
    };
    let mut opts = ValidateOptions {
        workers: workers(global),
        break_abc,
        ..ValidateOptions::default()
    };
    if let Some(seed) = global.seed {
        opts.seed = seed;
    }
    if let Some(cases) = cases {
        opts.cases = cases;
    }
    let mut failed = Vec::new();
    for p in props {
        let out = run_property(p, &opts)?;
        let status = if out.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<20} {}", p.as_str(), out.detail);
        if !out.passed() {
            failed.push(p.as_str());
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed properties: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn demo(global: &Global, trials: usize) -> Result<ExitCode> {
    let mut opts = DemoOptions {
        trials,
        ..DemoOptions::default()
    };
    if let Some(seed) = global.seed {
        opts.seed = seed;
    }
    let result = run_demo(&opts)?;
    create_out(&global.out)?;
    write_file_atomic(&global.out.join("demo_points.csv"), |w| {
        write_demo_csv(&result, w)
    })?;
    println!(
        "mean distance to target over {} minibatches of {}: standard {:.4}, abc {:.4}",
        opts.trials, opts.n, result.mean_error_standard, result.mean_error_abc
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let outcome = match &cli.command {
        Command::Scaling => scaling(g),
        Command::Baselines => baselines(g),
        Command::Validate {
            properties,
            break_abc,
            cases,
        } => validate(g, properties, *break_abc, *cases),
        Command::Demo { trials } => demo(g, *trials),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
