//! Seeded multi-run experiments, step-size grid search, and CSV output.
//!
//! Every run is keyed by `(method, seed, beta)` and jobs execute in a
//! fixed order (methods, then grid points, then seeds), so outputs are
//! byte-identical across reruns and thread counts. Wall-clock times are
//! confined to `manifest.txt`, the one file allowed to differ.
//!
//! Output files:
//!
//! - `traj_{method}_s{seed}[_b{beta}].csv`: one row per recorded
//!   iterate, header `k,t,F,grad_norm,H,V`.
//! - `summary.csv`: one row per run with final-iterate statistics.
//! - `long.csv`: all trajectory rows stacked with run keys prepended.
//! - `grid.csv` (grid search): per-beta medians and the selection.
//! - `gaps.csv`, `noise_sups.csv`, `energy_*.csv`: optional diagnostics.
//! - `manifest.txt`: run parameters plus wall times.

use crate::config::{ExperimentConfig, Method};
use crate::dynamics::{martingale_sup, pseudotrajectory_gap, DynamicsError};
use crate::kinetic::KineticEnergy;
use crate::objectives::Oracle;
use crate::optimizer::{
    run, RunConfig, RunError, Schedule, ScheduleError, Trajectory, TrajectoryRecord,
};
use rayon::prelude::*;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("grid search needs `beta_grid` in the [experiment] section")]
    NoBetaGrid,
    #[error("could not write `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not build a thread pool: {0}")]
    ThreadPool(String),
}

/// Anchor iterations and window used by the trajectory diagnostics.
pub const DIAGNOSTIC_ANCHORS: [u64; 3] = [100, 1_000, 10_000];
/// Pseudo-time window for gap and noise-sup diagnostics.
pub const DIAGNOSTIC_WINDOW: f64 = 1.0;
/// Integrator step for the pseudotrajectory diagnostic.
pub const DIAGNOSTIC_FLOW_STEP: f64 = 1e-3;

/// One completed run plus its summary statistics.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: Method,
    pub seed: u64,
    /// Grid scale applied to the schedule, if this run came from a grid
    /// search.
    pub beta: Option<f64>,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub final_v: f64,
    pub diverged: bool,
    pub dist_to_stationary: Option<f64>,
    pub wall_secs: f64,
    pub trajectory: Trajectory,
}

/// Per-method aggregate over an outcome batch.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub n_runs: usize,
    pub n_diverged: usize,
    /// Quartiles of the final gradient norm over non-diverged runs.
    pub grad_norm_quartiles: Option<[f64; 3]>,
    /// Quartiles of the final Lyapunov value over non-diverged runs.
    pub v_quartiles: Option<[f64; 3]>,
    /// Fraction of all runs that finished with the final gradient norm
    /// at or under the convergence threshold.
    pub converged_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct AggregateReport {
    pub threshold: f64,
    pub per_method: Vec<MethodSummary>,
}

impl fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>5} {:>8} {:>10} {:>12} {:>12} {:>12}",
            "method", "runs", "diverged", "converged", "gn_q1", "gn_median", "gn_q3"
        )?;
        for m in &self.per_method {
            let q = m.grad_norm_quartiles;
            let cell = |i: usize| match q {
                Some(q) => format!("{:.3e}", q[i]),
                None => "-".to_string(),
            };
            writeln!(
                f,
                "{:<12} {:>5} {:>8} {:>9.1}% {:>12} {:>12} {:>12}",
                m.method.name(),
                m.n_runs,
                m.n_diverged,
                100.0 * m.converged_fraction,
                cell(0),
                cell(1),
                cell(2),
            )?;
        }
        Ok(())
    }
}

/// Everything `run_experiment` produced.
#[derive(Debug)]
pub struct ExperimentReport {
    pub outcomes: Vec<RunOutcome>,
    pub aggregate: AggregateReport,
    pub output_dir: PathBuf,
}

impl ExperimentReport {
    pub fn all_diverged(&self) -> bool {
        !self.outcomes.is_empty() && self.outcomes.iter().all(|o| o.diverged)
    }
}

/// One grid point's score for a method.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub beta: f64,
    /// Lower median of final objective values over seeds; divergent
    /// runs count as +inf.
    pub median_final_f: f64,
    pub n_diverged: usize,
    pub n_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct MethodGrid {
    pub method: Method,
    pub rows: Vec<GridRow>,
    /// Smallest beta attaining the best median; `None` when every grid
    /// point diverged on all seeds.
    pub selected: Option<f64>,
}

#[derive(Debug)]
pub struct GridReport {
    pub per_method: Vec<MethodGrid>,
    pub output_dir: PathBuf,
}

impl GridReport {
    pub fn all_excluded(&self) -> bool {
        self.per_method.iter().all(|m| m.selected.is_none())
    }
}

/// Shortest round-trip decimal form; used for every float written to
/// CSV so reruns are byte-identical.
fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x}")
    }
}

fn file_stem(method: Method, seed: u64, beta: Option<f64>) -> String {
    match beta {
        None => format!("{}_s{seed}", method.name()),
        Some(b) => format!("{}_s{seed}_b{}", method.name(), fmt_f64(b)),
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|source| HarnessError::Io { path, source })
}

pub const TRAJECTORY_HEADER: &str = "k,t,F,grad_norm,H,V";
pub const SUMMARY_HEADER: &str =
    "method,seed,beta,final_F,final_grad_norm,final_V,diverged,dist_to_stationary";
pub const LONG_HEADER: &str = "method,seed,beta,k,t,F,grad_norm,H,V";
pub const GRID_HEADER: &str = "method,beta,median_final_F,n_diverged,n_seeds,selected";

fn record_row(out: &mut String, r: &TrajectoryRecord) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        r.k,
        fmt_f64(r.t),
        fmt_f64(r.f),
        fmt_f64(r.grad_norm),
        fmt_f64(r.h),
        fmt_f64(r.v)
    );
}

fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * (traj.records.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &traj.records {
        record_row(&mut out, r);
    }
    out
}

fn beta_field(beta: Option<f64>) -> String {
    beta.map(fmt_f64).unwrap_or_default()
}

fn summary_csv(outcomes: &[RunOutcome]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            o.method.name(),
            o.seed,
            beta_field(o.beta),
            fmt_f64(o.final_f),
            fmt_f64(o.final_grad_norm),
            fmt_f64(o.final_v),
            o.diverged,
            o.dist_to_stationary.map(fmt_f64).unwrap_or_default()
        );
    }
    out
}

fn long_csv(outcomes: &[RunOutcome]) -> String {
    let mut out = String::new();
    out.push_str(LONG_HEADER);
    out.push('\n');
    for o in outcomes {
        let key = format!("{},{},{}", o.method.name(), o.seed, beta_field(o.beta));
        for r in &o.trajectory.records {
            let _ = write!(out, "{key},");
            record_row(&mut out, r);
        }
    }
    out
}

/// Runs one method/seed/beta cell. Baselines use the same oracle,
/// schedule, record cadence, and divergence rule as the kinetic scheme;
/// their records carry `p = 0` and `H = F`, so `V = F - F*`.
fn run_one(
    cfg: &ExperimentConfig,
    method: Method,
    schedule: &Schedule,
    seed: u64,
) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let trajectory = match method {
        Method::Shd => run(&RunConfig {
            problem: cfg.problem.clone(),
            noise: cfg.noise.clone(),
            kinetic: cfg.kinetic.clone(),
            schedule: schedule.clone(),
            gamma: cfg.gamma,
            q0: cfg.q0.clone(),
            max_iter: cfg.max_iter,
            seed,
            record_every: effective_record_every(cfg),
            log_noise: cfg.diagnostics.martingale,
        })?,
        Method::Sgd => run_gradient_baseline(cfg, schedule, seed, None)?,
        Method::ClippedSgd => run_gradient_baseline(cfg, schedule, seed, Some(cfg.clip_radius))?,
    };
    let wall_secs = started.elapsed().as_secs_f64();
    let last = trajectory.final_record();
    let dist_to_stationary = if trajectory.diverged {
        None
    } else {
        cfg.problem.distance_to_stationary(&last.q)
    };
    Ok(RunOutcome {
        method,
        seed,
        beta: None,
        final_f: last.f,
        final_grad_norm: last.grad_norm,
        final_v: last.v,
        diverged: trajectory.diverged,
        dist_to_stationary,
        wall_secs,
        trajectory,
    })
}

fn effective_record_every(cfg: &ExperimentConfig) -> u64 {
    if cfg.diagnostics.needs_dense_records() {
        1
    } else {
        cfg.record_every
    }
}

/// First-order baseline: `q_{k+1} = q_k - alpha_k g_k`, with optional
/// hard clipping of `g_k` to a Euclidean radius.
fn run_gradient_baseline(
    cfg: &ExperimentConfig,
    schedule: &Schedule,
    seed: u64,
    clip_radius: Option<f64>,
) -> Result<Trajectory, RunError> {
    let problem = &cfg.problem;
    if cfg.q0.len() != problem.dim() {
        return Err(RunError::DimMismatch { got: cfg.q0.len(), want: problem.dim() });
    }
    let oracle = Oracle::new(problem.clone(), cfg.noise.clone(), seed)?;
    let record_every = effective_record_every(cfg);
    let f_star = problem.f_star();
    let zeros = vec![0.0; problem.dim()];
    let make_record = |k: u64, t: f64, q: &[f64]| {
        let f = problem.value(q);
        let grad_norm = crate::vecmath::norm(&problem.grad(q));
        TrajectoryRecord { k, t, q: q.to_vec(), p: zeros.clone(), f, grad_norm, h: f, v: f - f_star }
    };
    let mut q = cfg.q0.clone();
    let mut t = 0.0;
    let mut records = vec![make_record(0, t, &q)];
    let mut diverged = false;
    let mut max_speed_ratio = 0.0f64;
    for k in 0..cfg.max_iter {
        let alpha = schedule.alpha(k);
        let mut g = oracle.stochastic_grad(&q, k);
        if let Some(radius) = clip_radius {
            let norm = crate::vecmath::norm(&g);
            if norm > radius {
                let scale = radius / norm;
                for gi in &mut g {
                    *gi *= scale;
                }
            }
        }
        if alpha > 0.0 {
            // For first-order methods the move per unit step is the
            // (possibly clipped) gradient norm itself.
            max_speed_ratio = max_speed_ratio.max(crate::vecmath::norm(&g));
        }
        for (qi, gi) in q.iter_mut().zip(&g) {
            *qi -= alpha * gi;
        }
        t += alpha;
        let k1 = k + 1;
        if !crate::vecmath::all_finite(&q) {
            records.push(make_record(k1, t, &q));
            diverged = true;
            break;
        }
        if k1 == cfg.max_iter || k1 % record_every == 0 {
            records.push(make_record(k1, t, &q));
        }
    }
    // Consecutive boundary records can coincide when max_iter is a
    // multiple of the cadence; run() never duplicates, mirror that.
    if records.len() >= 2 {
        let n = records.len();
        if records[n - 1].k == records[n - 2].k {
            records.pop();
        }
    }
    Ok(Trajectory { records, diverged, noise_log: None, max_speed_ratio })
}

fn run_jobs(
    cfg: &ExperimentConfig,
    jobs: &[(Method, u64, Option<f64>)],
    threads: Option<usize>,
) -> Result<Vec<RunOutcome>, HarnessError> {
    let execute = || -> Result<Vec<RunOutcome>, RunError> {
        jobs.par_iter()
            .map(|&(method, seed, beta)| {
                let schedule = match beta {
                    None => cfg.schedule.clone(),
                    Some(b) => cfg
                        .schedule
                        .with_scale(b)
                        .expect("grid betas are validated before jobs are built"),
                };
                let mut outcome = run_one(cfg, method, &schedule, seed)?;
                outcome.beta = beta;
                Ok(outcome)
            })
            .collect()
    };
    let outcomes = match threads {
        None => execute()?,
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
            pool.install(execute)?
        }
    };
    Ok(outcomes)
}

/// Interpolated quartiles (linear between order statistics) of the
/// finite values in `xs`. `None` when no value is finite.
fn quartiles(xs: &[f64]) -> Option<[f64; 3]> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let at = |q: f64| -> f64 {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        v[lo] * (1.0 - w) + v[hi] * w
    };
    Some([at(0.25), at(0.5), at(0.75)])
}

/// Lower median: the element at index `(n - 1) / 2` of the sorted
/// values. Divergent entries enter as +inf, so a grid point is judged
/// by its typical seed, not its worst.
fn lower_median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
    v[(v.len() - 1) / 2]
}

pub fn summarize(outcomes: &[RunOutcome], threshold: f64) -> AggregateReport {
    let mut methods: Vec<Method> = outcomes.iter().map(|o| o.method).collect();
    methods.sort();
    methods.dedup();
    let per_method = methods
        .into_iter()
        .map(|method| {
            let group: Vec<&RunOutcome> =
                outcomes.iter().filter(|o| o.method == method).collect();
            let ok: Vec<&&RunOutcome> = group.iter().filter(|o| !o.diverged).collect();
            let grad_norms: Vec<f64> = ok.iter().map(|o| o.final_grad_norm).collect();
            let vs: Vec<f64> = ok.iter().map(|o| o.final_v).collect();
            let converged = group
                .iter()
                .filter(|o| !o.diverged && o.final_grad_norm <= threshold)
                .count();
            MethodSummary {
                method,
                n_runs: group.len(),
                n_diverged: group.len() - ok.len(),
                grad_norm_quartiles: quartiles(&grad_norms),
                v_quartiles: quartiles(&vs),
                converged_fraction: converged as f64 / group.len().max(1) as f64,
            }
        })
        .collect();
    AggregateReport { threshold, per_method }
}

fn manifest(cfg: &ExperimentConfig, outcomes: &[RunOutcome], threads: Option<usize>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tool: shd {}", env!("CARGO_PKG_VERSION"));
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let _ = writeln!(out, "created_unix: {now}");
    let _ = writeln!(out, "problem: {} dim={}", cfg.problem.name(), cfg.problem.dim());
    let _ = writeln!(out, "kinetic: {}", cfg.kinetic.name());
    let _ = writeln!(out, "schedule: {}", cfg.schedule.name());
    let _ = writeln!(out, "gamma: {}", fmt_f64(cfg.gamma));
    let _ = writeln!(out, "max_iter: {}", cfg.max_iter);
    let _ = writeln!(
        out,
        "methods: {}",
        cfg.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(out, "seeds: {}", cfg.seeds.len());
    let _ = writeln!(
        out,
        "parallelism: {}",
        threads.map(|n| n.to_string()).unwrap_or_else(|| "default".into())
    );
    let _ = writeln!(out, "wall_secs:");
    let mut total = 0.0;
    for o in outcomes {
        total += o.wall_secs;
        let _ = writeln!(out, "  {}: {:.3}", file_stem(o.method, o.seed, o.beta), o.wall_secs);
    }
    let _ = writeln!(out, "total_wall_secs: {total:.3}");
    out
}

/// Diagnostic CSVs for runs that recorded densely. Anchors that do not
/// fit inside a trajectory are skipped rather than reported as errors.
fn diagnostics_csvs(
    cfg: &ExperimentConfig,
    outcomes: &[RunOutcome],
) -> Result<Vec<(String, String)>, HarnessError> {
    let mut files = Vec::new();
    if cfg.diagnostics.pseudotrajectory {
        let mut out = String::from("method,seed,beta,anchor_k,window,gap\n");
        for o in outcomes.iter().filter(|o| o.method == Method::Shd && !o.diverged) {
            for &anchor in &DIAGNOSTIC_ANCHORS {
                let gap = match pseudotrajectory_gap(
                    &o.trajectory,
                    &cfg.kinetic,
                    &cfg.problem,
                    cfg.gamma,
                    anchor as usize,
                    DIAGNOSTIC_WINDOW,
                    DIAGNOSTIC_FLOW_STEP,
                ) {
                    Ok(gap) => gap,
                    Err(
                        DynamicsError::AnchorOutOfRange { .. }
                        | DynamicsError::WindowExceedsTrajectory { .. },
                    ) => continue,
                    Err(e) => return Err(e.into()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    o.method.name(),
                    o.seed,
                    beta_field(o.beta),
                    anchor,
                    fmt_f64(DIAGNOSTIC_WINDOW),
                    fmt_f64(gap)
                );
            }
        }
        files.push(("gaps.csv".to_string(), out));
    }
    if cfg.diagnostics.martingale {
        let mut out = String::from("method,seed,beta,anchor_k,window,sup\n");
        for o in outcomes.iter().filter(|o| o.method == Method::Shd && !o.diverged) {
            for &anchor in &DIAGNOSTIC_ANCHORS {
                let sup = match martingale_sup(&o.trajectory, anchor as usize, DIAGNOSTIC_WINDOW) {
                    Ok(sup) => sup,
                    Err(
                        DynamicsError::AnchorOutOfRange { .. }
                        | DynamicsError::WindowExceedsTrajectory { .. },
                    ) => continue,
                    Err(e) => return Err(e.into()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    o.method.name(),
                    o.seed,
                    beta_field(o.beta),
                    anchor,
                    fmt_f64(DIAGNOSTIC_WINDOW),
                    fmt_f64(sup)
                );
            }
        }
        files.push(("noise_sups.csv".to_string(), out));
    }
    if cfg.diagnostics.hamiltonian_trace {
        for o in outcomes.iter().filter(|o| o.method == Method::Shd) {
            let mut out = String::from("k,t,phi_p,decay_rate\n");
            for r in &o.trajectory.records {
                let phi_p = cfg.kinetic.value(&r.p);
                let grad = cfg.kinetic.grad(&r.p);
                let rate = -cfg.gamma * crate::vecmath::norm_sq(&grad);
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    r.k,
                    fmt_f64(r.t),
                    fmt_f64(phi_p),
                    fmt_f64(rate)
                );
            }
            files.push((format!("energy_{}.csv", file_stem(o.method, o.seed, o.beta)), out));
        }
    }
    Ok(files)
}

/// Runs every configured method over every seed and writes the output
/// set to the config's output directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentReport, HarnessError> {
    let jobs: Vec<(Method, u64, Option<f64>)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s, None)))
        .collect();
    let outcomes = run_jobs(cfg, &jobs, threads)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
    for o in &outcomes {
        let name = format!("traj_{}.csv", file_stem(o.method, o.seed, o.beta));
        write_file(dir, &name, &trajectory_csv(&o.trajectory))?;
    }
    write_file(dir, "summary.csv", &summary_csv(&outcomes))?;
    write_file(dir, "long.csv", &long_csv(&outcomes))?;
    for (name, body) in diagnostics_csvs(cfg, &outcomes)? {
        write_file(dir, &name, &body)?;
    }
    write_file(dir, "manifest.txt", &manifest(cfg, &outcomes, threads))?;
    let aggregate = summarize(&outcomes, cfg.convergence_threshold);
    Ok(ExperimentReport { outcomes, aggregate, output_dir: dir.clone() })
}

/// Scores every `beta_grid` entry for every method and picks, per
/// method, the smallest beta attaining the best lower-median final
/// objective. Grid points whose every seed diverged are excluded from
/// selection.
pub fn grid_search(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<GridReport, HarnessError> {
    let grid = cfg.beta_grid.as_ref().ok_or(HarnessError::NoBetaGrid)?;
    let mut betas = grid.clone();
    betas.sort_by(|a, b| a.partial_cmp(b).expect("betas are finite"));
    betas.dedup();
    for &b in &betas {
        cfg.schedule.with_scale(b)?;
    }
    let jobs: Vec<(Method, u64, Option<f64>)> = cfg
        .methods
        .iter()
        .flat_map(|&m| {
            betas
                .iter()
                .flat_map(move |&b| cfg.seeds.iter().map(move |&s| (m, s, Some(b))))
        })
        .collect();
    let outcomes = run_jobs(cfg, &jobs, threads)?;

    let per_method = cfg
        .methods
        .iter()
        .map(|&method| {
            let rows: Vec<GridRow> = betas
                .iter()
                .map(|&beta| {
                    let scores: Vec<f64> = outcomes
                        .iter()
                        .filter(|o| o.method == method && o.beta == Some(beta))
                        .map(|o| if o.diverged { f64::INFINITY } else { o.final_f })
                        .collect();
                    let n_diverged = scores.iter().filter(|s| !s.is_finite()).count();
                    GridRow {
                        beta,
                        median_final_f: lower_median(&scores),
                        n_diverged,
                        n_seeds: scores.len(),
                    }
                })
                .collect();
            let mut selected: Option<(f64, f64)> = None;
            for row in &rows {
                if row.n_diverged == row.n_seeds {
                    continue;
                }
                let better = match selected {
                    None => true,
                    Some((_, best)) => row.median_final_f < best,
                };
                if better {
                    selected = Some((row.beta, row.median_final_f));
                }
            }
            MethodGrid { method, rows, selected: selected.map(|(beta, _)| beta) }
        })
        .collect();
    let report = GridReport { per_method, output_dir: cfg.output_dir.clone() };

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
    let mut grid_rows = String::new();
    grid_rows.push_str(GRID_HEADER);
    grid_rows.push('\n');
    for m in &report.per_method {
        for row in &m.rows {
            let _ = writeln!(
                grid_rows,
                "{},{},{},{},{},{}",
                m.method.name(),
                fmt_f64(row.beta),
                fmt_f64(row.median_final_f),
                row.n_diverged,
                row.n_seeds,
                m.selected == Some(row.beta)
            );
        }
    }
    write_file(dir, "grid.csv", &grid_rows)?;
    write_file(dir, "summary.csv", &summary_csv(&outcomes))?;
    write_file(dir, "manifest.txt", &manifest(cfg, &outcomes, threads))?;
    Ok(report)
}

/// State audit for `check`: greatest observed violation of each kinetic
/// energy property and objective smoothness floor.
pub struct CheckLine {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

/// Numerical audit of kinetic-energy properties and objective gradients
/// on random points. Returns one line per subject.
pub fn check_properties(
    kinetics: &[(KineticEnergy, usize)],
    problems: &[Arc<crate::objectives::Problem>],
    samples: usize,
    seed: u64,
) -> Vec<CheckLine> {
    use rand::prelude::*;
    let mut lines = Vec::new();
    for (ke, dim) in kinetics {
        let report = ke.check_regularity(*dim, samples, seed);
        let info = ke.grad_lipschitz(*dim);
        let quotient_cap = match info.provenance {
            crate::kinetic::Provenance::Analytic => info.value * (1.0 + 1e-9),
            crate::kinetic::Provenance::Estimated => info.value * 1.05,
        };
        let passed = report.max_convexity_violation <= 1e-10
            && report.max_grad_quotient <= quotient_cap
            && report.min_above_lower_bound >= -1e-12
            && report.rays_monotone;
        lines.push(CheckLine {
            label: format!("kinetic {}", ke.name()),
            passed,
            detail: format!(
                "convexity {:.1e}, quotient {:.4}/{:.4}, floor {:.1e}, rays {}",
                report.max_convexity_violation,
                report.max_grad_quotient,
                info.value,
                report.min_above_lower_bound,
                if report.rays_monotone { "ok" } else { "violated" }
            ),
        });
    }
    for problem in problems {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x0bea_c0de);
        let dim = problem.dim();
        // The smoothness constant is claimed over the problem's own
        // sample box; outside it the gap inequality need not hold.
        let (lo, hi) = problem.sample_box();
        let mut min_gap = f64::INFINITY;
        let mut max_grad_err = 0.0f64;
        for _ in 0..samples.max(10) {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
            min_gap = min_gap.min(problem.smoothness_gap(&x));
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
            let g = problem.grad(&x);
            let h = 1e-6;
            for i in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (problem.value(&xp) - problem.value(&xm)) / (2.0 * h);
                let scale = 1.0f64.max(g[i].abs());
                max_grad_err = max_grad_err.max((fd - g[i]).abs() / scale);
            }
        }
        let passed = min_gap >= -1e-9 && max_grad_err <= 1e-4;
        lines.push(CheckLine {
            label: format!("problem {}", problem.name()),
            passed,
            detail: format!("smoothness floor {min_gap:.1e}, max grad err {max_grad_err:.1e}"),
        });
    }
    lines
}
