//! Command-line front end for the experiment harness.
//!
//! Exit codes: 0 success, 1 configuration error, 2 every run diverged
//! (or grid search excluded every step size), 3 internal error.

use clap::{Args, Parser, Subcommand};
use shd::config::{parse_config, resolve_output_dir, ExperimentConfig};
use shd::harness::{check_properties, grid_search, run_experiment, HarnessError};
use shd::kinetic::KineticEnergy;
use shd::objectives::Problem;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "shd", version, about = "Stochastic descent with kinetic-energy preconditioning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides SHD_OUTPUT_DIR and the config value.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured experiment and write CSV outputs.
    Run {
        #[command(flatten)]
        common: RunArgs,
        /// Extra diagnostics: martingale, pseudotrajectory, hamiltonian.
        #[arg(long, value_delimiter = ',')]
        diagnostics: Vec<String>,
    },
    /// Score each step-size scale in `beta_grid` and pick the best.
    Grid {
        #[command(flatten)]
        common: RunArgs,
    },
    /// Numerically audit kinetic-energy and objective properties.
    Check {
        /// Audit only the kinetic energy and problem from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random points per property.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the tool version.
    Version,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_ALL_DIVERGED: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn harness_exit(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Run(_) | HarnessError::Schedule(_) | HarnessError::NoBetaGrid => EXIT_CONFIG,
        HarnessError::Io { .. } | HarnessError::Dynamics(_) | HarnessError::ThreadPool(_) => {
            EXIT_INTERNAL
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, ExitCode> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| fail(EXIT_CONFIG, format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| fail(EXIT_CONFIG, e))?;
    cfg.output_dir = resolve_output_dir(
        &cfg.output_dir,
        args.out.clone(),
        std::env::var_os("SHD_OUTPUT_DIR"),
    );
    Ok(cfg)
}

fn cmd_run(common: RunArgs, diagnostics: Vec<String>) -> ExitCode {
    let mut cfg = match load_config(&common) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    for name in &diagnostics {
        let name = name.trim();
        if name.is_empty() {
            continue;
        }
        if !cfg.diagnostics.enable(name) {
            return fail(EXIT_CONFIG, format!("unknown diagnostic `{name}`"));
        }
    }
    match run_experiment(&cfg, common.parallel) {
        Ok(report) => {
            print!("{}", report.aggregate);
            println!("wrote {}", report.output_dir.display());
            if report.all_diverged() {
                eprintln!("error: every run diverged");
                ExitCode::from(EXIT_ALL_DIVERGED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => fail(harness_exit(&e), e),
    }
}

fn cmd_grid(common: RunArgs) -> ExitCode {
    let cfg = match load_config(&common) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    match grid_search(&cfg, common.parallel) {
        Ok(report) => {
            for m in &report.per_method {
                for row in &m.rows {
                    println!(
                        "{} beta={} median_final_F={} diverged={}/{}",
                        m.method.name(),
                        row.beta,
                        row.median_final_f,
                        row.n_diverged,
                        row.n_seeds
                    );
                }
                match m.selected {
                    Some(beta) => println!("{} selected beta={beta}", m.method.name()),
                    None => println!("{} selected none (all grid points diverged)", m.method.name()),
                }
            }
            println!("wrote {}", report.output_dir.display());
            if report.all_excluded() {
                eprintln!("error: every grid point diverged on every seed");
                ExitCode::from(EXIT_ALL_DIVERGED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => fail(harness_exit(&e), e),
    }
}

/// Default audit set: every kinetic-energy family and every objective.
fn default_audit() -> (Vec<(KineticEnergy, usize)>, Vec<Arc<Problem>>) {
    let dim = 4;
    let kinetics = vec![
        (KineticEnergy::quadratic(), dim),
        (
            KineticEnergy::anisotropic(
                vec![
                    vec![2.0, 0.5, 0.0, 0.0],
                    vec![0.5, 1.0, 0.0, 0.0],
                    vec![0.0, 0.0, 3.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.5],
                ],
                vec![0.1, -0.2, 0.0, 0.3],
                0.0,
            )
            .expect("audit matrix is symmetric positive definite"),
            dim,
        ),
        (KineticEnergy::relativistic(1.0, 1.0).expect("valid parameters"), dim),
        (KineticEnergy::rescaled(1.0, 1e-3).expect("valid parameters"), dim),
        (KineticEnergy::soft_clip(), dim),
        (KineticEnergy::log_sum_exp(dim).expect("valid dimension"), dim),
        (KineticEnergy::half_squared_lp(4.0).expect("valid exponent"), dim),
    ];
    let problems = vec![
        Arc::new(
            Problem::quadratic_diag(vec![1.0, 4.0, 0.25], vec![0.0; 3])
                .expect("valid diagonal"),
        ),
        Arc::new(Problem::rosenbrock()),
        Arc::new(Problem::rastrigin(2).expect("valid dimension")),
        Arc::new(Problem::logistic_fixture(0.1).expect("valid regularizer")),
    ];
    (kinetics, problems)
}

fn cmd_check(config: Option<PathBuf>, samples: usize, seed: u64) -> ExitCode {
    let (kinetics, problems) = match config {
        None => default_audit(),
        Some(path) => {
            let text = match std::fs::read_to_string(&path) {
                Ok(text) => text,
                Err(e) => return fail(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())),
            };
            match parse_config(&text) {
                Ok(cfg) => {
                    let dim = cfg.problem.dim();
                    (vec![(cfg.kinetic.clone(), dim)], vec![cfg.problem.clone()])
                }
                Err(e) => return fail(EXIT_CONFIG, e),
            }
        }
    };
    let lines = check_properties(&kinetics, &problems, samples, seed);
    let mut ok = true;
    for line in &lines {
        let status = if line.passed { "PASS" } else { "FAIL" };
        println!("{status} {} ({})", line.label, line.detail);
        ok &= line.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: property audit failed");
        ExitCode::from(EXIT_INTERNAL)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run { common, diagnostics } => cmd_run(common, diagnostics),
        Cmd::Grid { common } => cmd_grid(common),
        Cmd::Check { config, samples, seed } => cmd_check(config, samples, seed),
        Cmd::Version => {
            println!("shd {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}
