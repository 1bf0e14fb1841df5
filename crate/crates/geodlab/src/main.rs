//! Experiment runner CLI.
//!
//! Exit codes: 0 on success, 1 when a scenario check fails or a solver does
//! not converge, 2 on configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geodlab::config::{self, ExperimentConfig, Scenario};
use geodlab::error::GeodesicError;
use geodlab::runner;

#[derive(Parser)]
#[command(
    name = "geodlab",
    about = "Geodesic chord laboratory on model Finsler manifolds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the class minimizers over a class range.
    SolveClasses(RunArgs),
    /// Relax sweepouts over powers of the generator and report the sandwich.
    MinmaxScan(RunArgs),
    /// Enumerate, count and fit the geodesic census up to a length cap.
    Census(RunArgs),
    /// Enumerate word-length balls and fit the growth degree.
    GroupGrowth(RunArgs),
    /// Run the whole check battery and write a pass/fail report.
    VerifyAll(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (TOML sections with key = value entries).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-class fan-out.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Optional config; verify-all only reads the seed from it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, config_path, out, seed, jobs) = match &cli.command {
        Command::SolveClasses(a) => (Scenario::SolveClasses, Some(&a.config), &a.out, a.seed, a.jobs),
        Command::MinmaxScan(a) => (Scenario::MinmaxScan, Some(&a.config), &a.out, a.seed, a.jobs),
        Command::Census(a) => (Scenario::Census, Some(&a.config), &a.out, a.seed, a.jobs),
        Command::GroupGrowth(a) => (Scenario::GroupGrowth, Some(&a.config), &a.out, a.seed, a.jobs),
        Command::VerifyAll(a) => (Scenario::VerifyAll, a.config.as_ref(), &a.out, a.seed, a.jobs),
    };

    let mut cfg: ExperimentConfig = match config_path {
        Some(path) => match config::load_config(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("geodlab: invalid config: {e}");
                return ExitCode::from(2);
            }
        },
        None => default_verify_config(),
    };
    if let Some(declared) = cfg.scenario {
        if declared != scenario {
            eprintln!(
                "geodlab: config declares scenario '{}' but the subcommand is '{}'",
                declared.name(),
                scenario.name()
            );
            return ExitCode::from(2);
        }
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }

    match runner::run(&cfg, scenario, out, jobs) {
        Ok(summary) => {
            for check in &summary.checks {
                println!(
                    "{} {} — {}",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            for artifact in &summary.artifacts {
                println!("wrote {}", artifact.display());
            }
            if summary.all_pass() {
                ExitCode::SUCCESS
            } else {
                let failing: Vec<&str> = summary
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.name.as_str())
                    .collect();
                eprintln!("geodlab: failing checks: {}", failing.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e @ GeodesicError::Config(_)) => {
            eprintln!("geodlab: invalid config: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("geodlab: {e}");
            ExitCode::from(1)
        }
    }
}

/// Minimal placeholder config so `verify-all` can run without a file; the
/// battery builds its own scenarios internally.
fn default_verify_config() -> ExperimentConfig {
    ExperimentConfig {
        manifold: geodlab::Manifold::flat_torus(nalgebra::Vector2::new(0.0, 0.0)).unwrap(),
        p: geodlab::Chart::plane(0.0, 0.0),
        q: geodlab::Chart::plane(0.5, 0.5),
        scenario: Some(Scenario::VerifyAll),
        class_min: 0,
        class_max: 0,
        length_max: 1.0,
        n_samples: 64,
        tol: 1e-8,
        max_iter: 1000,
        seed: 0,
        group: None,
        out_dir: None,
    }
}
