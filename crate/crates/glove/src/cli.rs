//! Command-line entry point: run, sweep, validate, report.
//!
//! Exit codes: 0 success, 1 validation (bound check) failure, 2 config
//! error, 3 runtime failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bounds::{mc_false_alarm_rate, mc_l1_coverage, SyntheticResponse};
use crate::config::{load_config, ConfigError, RunConfig};
use crate::harness::{aggregate, run_experiment, RunReport};
use crate::report::write_reports;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATE_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "glove", about = "Drift detection and memory realignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Verbosity (-v progress, -vv detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-key override, e.g. --set glove.enabled=false (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: GLOVE_OUT env var, then run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use seeds 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Explicit comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Worker threads for parallel seeds.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configured experiment and write reports.
    Run(RunArgs),
    /// Cross-product of --grid values over a base config, one merged table.
    Sweep {
        #[command(flatten)]
        base: RunArgs,
        /// Grid axis, e.g. --grid verify.alpha=1,5,20 (repeatable).
        #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
        grid: Vec<String>,
    },
    /// Monte Carlo checks of the detection and budget bounds.
    Validate {
        /// Trials for the detection bound (per grid point).
        #[arg(long, default_value_t = 10_000)]
        detect_trials: u64,
        /// Trials for the budget coverage bound (per grid point).
        #[arg(long, default_value_t = 5_000)]
        coverage_trials: u64,
        /// Base RNG seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print previously written report files from an output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn prepare_config(args: &RunArgs, verbose: u8) -> Result<RunConfig, ConfigError> {
    let mut cfg = load_config(&args.config, &args.overrides)?;
    if let Some(n) = args.seeds {
        cfg.run.seeds = (0..n).collect();
    }
    if let Some(list) = &args.seed_list {
        cfg.run.seeds = list.clone();
    }
    if let Some(out) = &args.out {
        cfg.run.out_dir = out.clone();
    } else if let Ok(out) = std::env::var("GLOVE_OUT") {
        cfg.run.out_dir = PathBuf::from(out);
    }
    cfg.validate()?;
    if verbose > 1 {
        eprintln!("config: {cfg:#?}");
    }
    Ok(cfg)
}

fn init_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn finish(reports: &[RunReport], out_dir: &std::path::Path, verbose: u8) -> i32 {
    let agg = match aggregate(reports) {
        Ok(agg) => agg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_reports(out_dir, reports, &agg) {
        eprintln!("error: {e}");
        return EXIT_RUNTIME;
    }
    if verbose > 0 {
        for row in &agg.rows {
            eprintln!(
                "{} {}: success {:.3}, score {:.3}, probes {:.3}",
                row.method, row.phase, row.success_rate, row.mean_score, row.mean_probes
            );
        }
    }
    println!("reports written to {}", out_dir.display());
    EXIT_OK
}

fn cmd_run(args: RunArgs, verbose: u8) -> i32 {
    let cfg = match prepare_config(&args, verbose) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    init_jobs(args.jobs);
    match run_experiment(&cfg) {
        Ok(report) => {
            if report.seed_reports().next().is_none() {
                eprintln!("error: all seeds failed");
                return EXIT_RUNTIME;
            }
            finish(std::slice::from_ref(&report), &cfg.run.out_dir, verbose)
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Expand `KEY=V1,V2,...` axes into the cross-product of override sets.
fn expand_grid(grid: &[String]) -> Result<Vec<Vec<String>>, String> {
    let mut points: Vec<Vec<String>> = vec![Vec::new()];
    for axis in grid {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| format!("grid axis `{axis}` is not KEY=V1,V2,..."))?;
        let values: Vec<&str> = values.split(',').filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(format!("grid axis `{axis}` has no values"));
        }
        let mut next = Vec::with_capacity(points.len() * values.len());
        for point in &points {
            for v in &values {
                let mut p = point.clone();
                p.push(format!("{key}={v}"));
                next.push(p);
            }
        }
        points = next;
    }
    Ok(points)
}

fn cmd_sweep(base: RunArgs, grid: Vec<String>, verbose: u8) -> i32 {
    let points = match expand_grid(&grid) {
        Ok(points) => points,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    init_jobs(base.jobs);
    let mut reports = Vec::new();
    let mut out_dir = None;
    for point in points {
        let mut args = RunArgs {
            config: base.config.clone(),
            overrides: base.overrides.clone(),
            out: base.out.clone(),
            seeds: base.seeds,
            seed_list: base.seed_list.clone(),
            jobs: None,
        };
        args.overrides.extend(point.clone());
        let mut cfg = match prepare_config(&args, verbose) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
        };
        if !point.is_empty() {
            cfg.run.method = format!("{}[{}]", cfg.run.method, point.join(","));
        }
        if verbose > 0 {
            eprintln!("sweep point: {}", cfg.run.method);
        }
        out_dir = Some(cfg.run.out_dir.clone());
        match run_experiment(&cfg) {
            Ok(report) => reports.push(report),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_RUNTIME;
            }
        }
    }
    let out_dir = out_dir.expect("at least one grid point");
    finish(&reports, &out_dir, verbose)
}

fn cmd_validate(detect_trials: u64, coverage_trials: u64, seed: u64) -> i32 {
    let mut all_pass = true;
    let distributions: [&[f64]; 3] = [&[0.5, 0.5], &[0.7, 0.2, 0.1], &[0.4, 0.3, 0.2, 0.1]];
    let delta = 0.05;
    // Monte Carlo slack: three binomial sigmas on the estimated rate.
    let slack = 3.0 * (delta * (1.0 - delta) / detect_trials as f64).sqrt();
    for (qi, q) in distributions.iter().enumerate() {
        let resp = SyntheticResponse::new(
            q.iter()
                .enumerate()
                .map(|(i, p)| (format!("o{i}"), *p))
                .collect(),
            seed + qi as u64,
        );
        for n in [20u64, 50, 200] {
            let report = mc_false_alarm_rate(&resp, n, delta, detect_trials);
            let pass = report.max_rate() <= delta + slack;
            all_pass &= pass;
            println!(
                "detection Q{} n={} rate={:.4} bound={:.4}: {}",
                qi,
                n,
                report.max_rate(),
                delta + slack,
                if pass { "pass" } else { "FAIL" }
            );
        }
    }
    let budget_points = [(2usize, 0.1, 0.05, 877u64), (4, 0.2, 0.1, 254)];
    for (k, epsilon, delta, alpha) in budget_points {
        let p = 1.0 / k as f64;
        let resp = SyntheticResponse::new(
            (0..k).map(|i| (format!("o{i}"), p)).collect(),
            seed + 100 + k as u64,
        );
        let report = mc_l1_coverage(&resp, alpha, epsilon, coverage_trials);
        let pass = report.failure_rate <= delta;
        all_pass &= pass;
        println!(
            "coverage K={} eps={} alpha={} failure={:.4} delta={}: {}",
            k, epsilon, alpha, report.failure_rate, delta,
            if pass { "pass" } else { "FAIL" }
        );
    }
    if all_pass {
        EXIT_OK
    } else {
        EXIT_VALIDATE_FAIL
    }
}

fn cmd_report(dir: PathBuf) -> i32 {
    for name in ["summary.csv", "curves.csv"] {
        match std::fs::read_to_string(dir.join(name)) {
            Ok(text) => {
                println!("# {name}");
                print!("{text}");
            }
            Err(e) => {
                eprintln!("config error: cannot read {}: {e}", dir.join(name).display());
                return EXIT_CONFIG;
            }
        }
    }
    EXIT_OK
}

/// Parse argv and dispatch; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success exits.
            let code = if e.exit_code() == 0 { EXIT_OK } else { EXIT_CONFIG };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(args, cli.verbose),
        Command::Sweep { base, grid } => cmd_sweep(base, grid, cli.verbose),
        Command::Validate {
            detect_trials,
            coverage_trials,
            seed,
        } => cmd_validate(detect_trials, coverage_trials, seed),
        Command::Report { dir } => cmd_report(dir),
    }
}
