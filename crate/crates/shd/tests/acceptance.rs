//! Acceptance gate: twelve numbered criteria, one test per criterion,
//! with every tolerance pinned in the code below. Each test prints one
//! `ACCEPTANCE NN <name>: PASS (...)` line (visible with
//! `--nocapture`); failures panic with the measured values. The two
//! Monte Carlo batches are computed once and shared: the convergence
//! benchmark feeds criteria 06/07/10 and the trend batch feeds 08/09.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shd::config::parse_config;
use shd::dynamics::{
    dissipation_residuals, martingale_sup, pseudotrajectory_gap, rk4_flow, PhasePoint,
};
use shd::harness::{
    grid_search, run_experiment, GRID_HEADER, LONG_HEADER, SUMMARY_HEADER, TRAJECTORY_HEADER,
};
use shd::kinetic::{KineticEnergy, Provenance};
use shd::objectives::{NoiseModel, Oracle, Problem};
use shd::optimizer::{momentum_step_reference, run, step, step_with, OptimizerState, RunConfig, Schedule};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Midpoint-interpolated median.
fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    let n = v.len();
    assert!(n > 0);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The full kinetic-energy roster with the sample dimension used for
/// property checks.
fn all_kinetics() -> Vec<(KineticEnergy, usize)> {
    let a = vec![
        vec![2.0, 0.5, 0.0, 0.0],
        vec![0.5, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 3.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.5],
    ];
    let b = vec![0.1, -0.2, 0.0, 0.3];
    vec![
        (KineticEnergy::quadratic(), 5),
        (KineticEnergy::anisotropic(a, b, 0.3).unwrap(), 4),
        (KineticEnergy::relativistic(2.0, 1.5).unwrap(), 5),
        (KineticEnergy::rescaled(1.0, 1e-3).unwrap(), 5),
        (KineticEnergy::soft_clip(), 5),
        (KineticEnergy::log_sum_exp(5).unwrap(), 5),
        (KineticEnergy::half_squared_lp(4.0).unwrap(), 5),
    ]
}

fn all_problems() -> Vec<Arc<Problem>> {
    vec![
        Arc::new(Problem::quadratic_diag(vec![1.0, 4.0, 0.25], vec![0.5, 0.0, -1.0]).unwrap()),
        Arc::new(Problem::rosenbrock()),
        Arc::new(Problem::rastrigin(2).unwrap()),
        Arc::new(Problem::logistic_fixture(0.1).unwrap()),
    ]
}

/// Strongly convex quadratic with condition number exactly 100: one
/// slow coordinate and nine stiff ones.
fn benchmark_problem() -> Arc<Problem> {
    let mut diag = vec![0.6; 10];
    diag[0] = 0.006;
    Arc::new(Problem::quadratic_diag(diag, vec![0.0; 10]).unwrap())
}

fn benchmark_q0() -> Vec<f64> {
    let mut q0 = vec![0.4; 10];
    q0[0] = 2.0;
    q0
}

fn benchmark_schedule() -> Schedule {
    Schedule::harmonic(1.0, 10.0, 1.0).unwrap()
}

// ---------------------------------------------------------------------
// Shared batch for criteria 06 (convergence), 07 (Lyapunov tails), and
// 10 (bounded updates): 4 kinetic energies x 100 seeds x 1e5 iterations
// of the frozen noisy benchmark.

const BENCH_SEEDS: u64 = 100;
const BENCH_ITERS: u64 = 100_000;
const GRAD_THRESHOLD: f64 = 5e-2;

struct BenchStat {
    name: &'static str,
    grad_sup: Option<f64>,
    n_diverged: usize,
    n_converged: usize,
    worst_final_grad: f64,
    max_speed_ratio: f64,
    all_v_finite: bool,
    worst_tail_ratio: f64,
    batch_secs: f64,
}

static BENCH: OnceLock<Vec<BenchStat>> = OnceLock::new();

fn bench_stats() -> &'static [BenchStat] {
    BENCH.get_or_init(|| {
        let problem = benchmark_problem();
        let kinetics: Vec<(&'static str, KineticEnergy)> = vec![
            ("quadratic", KineticEnergy::quadratic()),
            ("rescaled", KineticEnergy::rescaled(1.0, 1e-3).unwrap()),
            ("soft_clip", KineticEnergy::soft_clip()),
            ("log_sum_exp", KineticEnergy::log_sum_exp(10).unwrap()),
        ];
        kinetics
            .into_iter()
            .map(|(name, ke)| {
                let started = Instant::now();
                let per_seed: Vec<(f64, bool, f64, bool, f64)> = (0..BENCH_SEEDS)
                    .into_par_iter()
                    .map(|seed| {
                        let traj = run(&RunConfig {
                            problem: problem.clone(),
                            noise: NoiseModel::AdditiveGaussian { sigma: 1.0 },
                            kinetic: ke.clone(),
                            schedule: benchmark_schedule(),
                            gamma: 1.0,
                            q0: benchmark_q0(),
                            max_iter: BENCH_ITERS,
                            seed,
                            record_every: 500,
                            log_noise: false,
                        })
                        .expect("benchmark config is valid");
                        let last = traj.final_record();
                        let v_finite = traj.records.iter().all(|r| r.v.is_finite());
                        // Criterion 07 surrogate: variation of V over the
                        // last 10% of iterations relative to its median.
                        let tail: Vec<f64> = traj
                            .records
                            .iter()
                            .filter(|r| r.k >= BENCH_ITERS * 9 / 10)
                            .map(|r| r.v)
                            .collect();
                        let tail_ratio = if traj.diverged {
                            f64::INFINITY
                        } else {
                            let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
                            let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
                            (hi - lo) / median(&tail)
                        };
                        (
                            last.grad_norm,
                            traj.diverged,
                            traj.max_speed_ratio,
                            v_finite,
                            tail_ratio,
                        )
                    })
                    .collect();
                let mut stat = BenchStat {
                    name,
                    grad_sup: ke.grad_sup_norm(),
                    n_diverged: 0,
                    n_converged: 0,
                    worst_final_grad: 0.0,
                    max_speed_ratio: 0.0,
                    all_v_finite: true,
                    worst_tail_ratio: 0.0,
                    batch_secs: 0.0,
                };
                for (grad, diverged, ratio, v_finite, tail_ratio) in per_seed {
                    stat.n_diverged += diverged as usize;
                    stat.n_converged += (!diverged && grad <= GRAD_THRESHOLD) as usize;
                    stat.worst_final_grad = stat.worst_final_grad.max(grad);
                    stat.max_speed_ratio = stat.max_speed_ratio.max(ratio);
                    stat.all_v_finite &= v_finite;
                    stat.worst_tail_ratio = stat.worst_tail_ratio.max(tail_ratio);
                }
                stat.batch_secs = started.elapsed().as_secs_f64();
                stat
            })
            .collect()
    })
}

// ---------------------------------------------------------------------
// Shared batch for criteria 08/09: 50 noise-logged, densely recorded
// runs of the benchmark with the quadratic kinetic energy; per-seed
// pseudotrajectory gaps and martingale sups at three anchors.

const TREND_SEEDS: u64 = 50;
const TREND_ITERS: u64 = 30_000;
const TREND_ANCHORS: [usize; 3] = [100, 1_000, 10_000];
const TREND_WINDOW: f64 = 1.0;

struct TrendStats {
    gaps: Vec<[f64; 3]>,
    sups: Vec<[f64; 3]>,
    batch_secs: f64,
}

static TREND: OnceLock<TrendStats> = OnceLock::new();

fn trend_stats() -> &'static TrendStats {
    TREND.get_or_init(|| {
        let started = Instant::now();
        let problem = benchmark_problem();
        let ke = KineticEnergy::quadratic();
        let pairs: Vec<([f64; 3], [f64; 3])> = (0..TREND_SEEDS)
            .into_par_iter()
            .map(|seed| {
                let traj = run(&RunConfig {
                    problem: problem.clone(),
                    noise: NoiseModel::AdditiveGaussian { sigma: 1.0 },
                    kinetic: ke.clone(),
                    schedule: benchmark_schedule(),
                    gamma: 1.0,
                    q0: benchmark_q0(),
                    max_iter: TREND_ITERS,
                    seed,
                    record_every: 1,
                    log_noise: true,
                })
                .expect("trend config is valid");
                let mut gaps = [0.0; 3];
                let mut sups = [0.0; 3];
                for (i, &anchor) in TREND_ANCHORS.iter().enumerate() {
                    gaps[i] = pseudotrajectory_gap(
                        &traj,
                        &ke,
                        &problem,
                        1.0,
                        anchor,
                        TREND_WINDOW,
                        1e-3,
                    )
                    .expect("anchor and window fit the trajectory");
                    sups[i] = martingale_sup(&traj, anchor, TREND_WINDOW)
                        .expect("noise log is present and dense");
                }
                (gaps, sups)
            })
            .collect();
        TrendStats {
            gaps: pairs.iter().map(|(g, _)| *g).collect(),
            sups: pairs.iter().map(|(_, s)| *s).collect(),
            batch_secs: started.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------------

#[test]
fn acceptance_01_gradient_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    // Mixed relative error of the analytic gradient against central
    // finite differences: ||g - fd|| / (1 + ||g||) <= 1e-6.
    let check = |value: &dyn Fn(&[f64]) -> f64, grad: Vec<f64>, x: &[f64]| {
        let mut fd = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            fd[i] = (value(&xp) - value(&xm)) / (2.0 * h);
        }
        let diff: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / (1.0 + norm(&grad))
    };
    for (ke, dim) in all_kinetics() {
        for _ in 0..100 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rel = check(&|y: &[f64]| ke.value(y), ke.grad(&x), &x);
            assert!(rel <= 1e-6, "kinetic {} rel err {rel:.3e} at {x:?}", ke.name());
            worst = worst.max(rel);
        }
    }
    for problem in all_problems() {
        for _ in 0..100 {
            let x: Vec<f64> =
                (0..problem.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rel = check(&|y: &[f64]| problem.value(y), problem.grad(&x), &x);
            assert!(rel <= 1e-6, "problem {} rel err {rel:.3e} at {x:?}", problem.name());
            worst = worst.max(rel);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 10.0, "criterion 01 took {secs:.1}s (budget 10s)");
    println!("ACCEPTANCE 01 gradient-oracle: PASS (max rel err {worst:.2e}, {secs:.2}s)");
}

#[test]
fn acceptance_02_kinetic_regularity() {
    let started = Instant::now();
    let mut worst_convexity = f64::MIN;
    let mut worst_floor = f64::MAX;
    for (ke, dim) in all_kinetics() {
        let report = ke.check_regularity(dim, 10_000, 202);
        assert!(
            report.max_convexity_violation <= 1e-10,
            "kinetic {}: convexity violated by {:.3e}",
            ke.name(),
            report.max_convexity_violation
        );
        let info = ke.grad_lipschitz(dim);
        if info.provenance == Provenance::Analytic {
            assert!(
                report.max_grad_quotient <= info.value * (1.0 + 1e-9),
                "kinetic {}: gradient quotient {:.12} exceeds lambda {:.12}",
                ke.name(),
                report.max_grad_quotient,
                info.value
            );
        }
        assert!(
            report.min_above_lower_bound >= -1e-12,
            "kinetic {}: value dipped {:.3e} below its lower bound",
            ke.name(),
            report.min_above_lower_bound
        );
        worst_convexity = worst_convexity.max(report.max_convexity_violation);
        worst_floor = worst_floor.min(report.min_above_lower_bound);
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 30.0, "criterion 02 took {secs:.1}s (budget 30s)");
    println!(
        "ACCEPTANCE 02 kinetic-regularity: PASS (worst convexity {worst_convexity:.2e}, \
         floor {worst_floor:.2e}, {secs:.2}s)"
    );
}

#[test]
fn acceptance_03_momentum_equivalence() {
    let started = Instant::now();
    let problem = benchmark_problem();
    let ke = KineticEnergy::quadratic();
    let schedule = Schedule::harmonic(0.5, 5.0, 1.0).unwrap();
    let gamma = 0.7;
    for seed in 0..20 {
        let oracle_a = Oracle::new(
            problem.clone(),
            NoiseModel::AdditiveGaussian { sigma: 1.0 },
            seed,
        )
        .unwrap();
        let oracle_b = Oracle::new(
            problem.clone(),
            NoiseModel::AdditiveGaussian { sigma: 1.0 },
            seed,
        )
        .unwrap();
        let mut a = OptimizerState::new(benchmark_q0());
        let mut b = OptimizerState::new(benchmark_q0());
        for k in 0..100u64 {
            let alpha = schedule.alpha(k);
            a = step(&a, &oracle_a, &ke, gamma, alpha);
            b = momentum_step_reference(&b, &oracle_b, gamma, alpha);
            for i in 0..a.q.len() {
                assert!(
                    a.p[i].to_bits() == b.p[i].to_bits()
                        && a.q[i].to_bits() == b.q[i].to_bits(),
                    "seed {seed} step {k} coordinate {i}: {} vs {}",
                    a.q[i],
                    b.q[i]
                );
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 5.0, "criterion 03 took {secs:.1}s (budget 5s)");
    println!("ACCEPTANCE 03 momentum-equivalence: PASS (20 seeds x 100 steps bitwise, {secs:.2}s)");
}

#[test]
fn acceptance_04_dissipation_identity() {
    let started = Instant::now();
    let quad = Arc::new(Problem::quadratic_diag(vec![1.0, 4.0], vec![0.0, 0.0]).unwrap());
    let logistic = Arc::new(Problem::logistic_fixture(0.1).unwrap());
    let cases: Vec<(KineticEnergy, Arc<Problem>, PhasePoint)> = vec![
        (
            KineticEnergy::quadratic(),
            quad.clone(),
            PhasePoint::new(vec![0.4, -0.3], vec![1.2, 0.8]),
        ),
        (
            KineticEnergy::soft_clip(),
            quad,
            PhasePoint::new(vec![0.4, -0.3], vec![1.2, 0.8]),
        ),
        (
            KineticEnergy::log_sum_exp(2).unwrap(),
            logistic,
            PhasePoint::new(vec![0.3, 0.2], vec![0.5, -0.3]),
        ),
    ];
    let mut worst_increase = f64::MIN;
    let mut worst_rate = f64::MIN;
    for (ke, problem, z0) in cases {
        let flow = rk4_flow(&ke, &problem, 1.0, &z0, 5.0, 1e-3).unwrap();
        let report = dissipation_residuals(&flow, &ke, &problem, 1.0);
        assert!(
            report.max_energy_increase <= 1e-7,
            "{} / {}: H increased by {:.3e}",
            ke.name(),
            problem.name(),
            report.max_energy_increase
        );
        assert!(
            report.max_rate_rel_err <= 1e-5,
            "{} / {}: dH/dt off by rel {:.3e}",
            ke.name(),
            problem.name(),
            report.max_rate_rel_err
        );
        worst_increase = worst_increase.max(report.max_energy_increase);
        worst_rate = worst_rate.max(report.max_rate_rel_err);
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 30.0, "criterion 04 took {secs:.1}s (budget 30s)");
    println!(
        "ACCEPTANCE 04 dissipation-identity: PASS (max increase {worst_increase:.2e}, \
         max rate err {worst_rate:.2e}, {secs:.2}s)"
    );
}

#[test]
fn acceptance_05_smoothness_gap() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = f64::MAX;
    for problem in all_problems() {
        // L is pre-computed over the problem's own sample box; the gap
        // inequality is claimed exactly there.
        let (lo, hi) = problem.sample_box();
        for _ in 0..1000 {
            let x: Vec<f64> =
                (0..problem.dim()).map(|_| rng.random_range(lo..hi)).collect();
            let gap = problem.smoothness_gap(&x);
            assert!(gap >= -1e-9, "problem {} gap {gap:.3e} at {x:?}", problem.name());
            worst = worst.min(gap);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 10.0, "criterion 05 took {secs:.1}s (budget 10s)");
    println!("ACCEPTANCE 05 smoothness-gap: PASS (min gap {worst:.2e}, {secs:.2}s)");
}

#[test]
fn acceptance_06_convergence_benchmark() {
    let started = Instant::now();
    let stats = bench_stats();
    let mut table = String::new();
    let mut failures = Vec::new();
    for s in stats {
        let ok = s.n_diverged == 0 && s.n_converged == BENCH_SEEDS as usize;
        table.push_str(&format!(
            "  {:<12} converged {:>3}/{} diverged {:>3} worst final ||grad|| {:.4} ({:.0}s)\n",
            s.name, s.n_converged, BENCH_SEEDS, s.n_diverged, s.worst_final_grad, s.batch_secs
        ));
        if !ok {
            failures.push(s.name);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    // The 300 s budget assumes 8 workers; scale it by what is available.
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8);
    let budget = 300.0 * 8.0 / workers as f64;
    assert!(secs < budget, "criterion 06 took {secs:.1}s (budget {budget:.0}s)");
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    print!("ACCEPTANCE 06 convergence-benchmark: {status} ({secs:.0}s)\n{table}");
    assert!(
        failures.is_empty(),
        "criterion 06 failed for {failures:?}: every seed must reach final \
         ||grad F|| <= {GRAD_THRESHOLD} without divergence (table above)"
    );
}

#[test]
fn acceptance_07_lyapunov_boundedness() {
    let started = Instant::now();
    let stats = bench_stats();
    let mut worst_ratio = 0.0f64;
    for s in stats {
        assert!(
            s.all_v_finite,
            "kinetic {}: a Lyapunov value was not finite",
            s.name
        );
        assert!(
            s.worst_tail_ratio < 0.10,
            "kinetic {}: tail V variation was {:.3} of the tail median (cap 0.10)",
            s.name,
            s.worst_tail_ratio
        );
        worst_ratio = worst_ratio.max(s.worst_tail_ratio);
    }
    let secs = started.elapsed().as_secs_f64();
    println!(
        "ACCEPTANCE 07 lyapunov-boundedness: PASS (worst tail ratio {worst_ratio:.3}, {secs:.2}s)"
    );
}

#[test]
fn acceptance_08_pseudotrajectory_trend() {
    let started = Instant::now();
    let stats = trend_stats();
    let medians: Vec<f64> = (0..3)
        .map(|i| median(&stats.gaps.iter().map(|g| g[i]).collect::<Vec<_>>()))
        .collect();
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "median gaps not strictly decreasing at anchors {TREND_ANCHORS:?}: {medians:?}"
    );
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 180.0, "criterion 08 took {secs:.1}s (budget 180s)");
    println!(
        "ACCEPTANCE 08 pseudotrajectory-trend: PASS (medians {:.4} > {:.4} > {:.4}, \
         batch {:.1}s)",
        medians[0], medians[1], medians[2], stats.batch_secs
    );
}

#[test]
fn acceptance_09_martingale_decay() {
    let started = Instant::now();
    let stats = trend_stats();
    let medians: Vec<f64> = (0..3)
        .map(|i| median(&stats.sups.iter().map(|s| s[i]).collect::<Vec<_>>()))
        .collect();
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "median noise sups not strictly decreasing at anchors {TREND_ANCHORS:?}: {medians:?}"
    );
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 120.0, "criterion 09 took {secs:.1}s (budget 120s)");
    println!(
        "ACCEPTANCE 09 martingale-decay: PASS (medians {:.4} > {:.4} > {:.4}, {secs:.2}s)",
        medians[0], medians[1], medians[2]
    );
}

#[test]
fn acceptance_10_bounded_updates() {
    let started = Instant::now();
    // Leg 1: the capped kinetics inside the shared benchmark batch never
    // moved the position faster than alpha times the gradient cap.
    for s in bench_stats() {
        let Some(sup) = s.grad_sup else { continue };
        assert!(
            s.max_speed_ratio <= sup * (1.0 + 1e-9),
            "kinetic {}: max ||dq||/alpha = {:.12} exceeds cap {sup}",
            s.name,
            s.max_speed_ratio
        );
    }
    // Leg 2: a dedicated noisy run for the relativistic energy, which
    // the benchmark batch does not include.
    let problem = benchmark_problem();
    let rel = KineticEnergy::relativistic(2.0, 1.5).unwrap();
    let rel_sup = rel.grad_sup_norm().unwrap();
    for seed in 0..5 {
        let traj = run(&RunConfig {
            problem: problem.clone(),
            noise: NoiseModel::AdditiveGaussian { sigma: 1.0 },
            kinetic: rel.clone(),
            schedule: benchmark_schedule(),
            gamma: 1.0,
            q0: benchmark_q0(),
            max_iter: 2_000,
            seed,
            record_every: 100,
            log_noise: false,
        })
        .unwrap();
        assert!(
            traj.max_speed_ratio <= rel_sup * (1.0 + 1e-9),
            "relativistic seed {seed}: ratio {:.12} exceeds cap {rel_sup}",
            traj.max_speed_ratio
        );
    }
    // Leg 3: spike oracle. A gradient of norm 1e6 must still move the
    // position by at most alpha times the cap.
    let spike_cases = vec![
        KineticEnergy::rescaled(1.0, 1e-3).unwrap(),
        KineticEnergy::relativistic(2.0, 1.5).unwrap(),
        KineticEnergy::soft_clip(),
    ];
    let alpha = 0.05;
    for ke in spike_cases {
        let sup = ke.grad_sup_norm().unwrap();
        let state = OptimizerState {
            p: vec![0.2, -0.1, 0.3, 0.0],
            q: vec![1.0, 2.0, -1.0, 0.5],
            k: 3,
            t: 0.4,
        };
        let next = step_with(
            &state,
            |_, _| vec![1e6, 0.0, 0.0, 0.0],
            |x| ke.grad(x),
            1.0,
            alpha,
        );
        let dq: f64 = state
            .q
            .iter()
            .zip(&next.q)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        assert!(
            dq <= alpha * sup * (1.0 + 1e-9),
            "kinetic {}: spike moved q by {dq} > alpha*cap = {}",
            ke.name(),
            alpha * sup
        );
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 5.0, "criterion 10 took {secs:.1}s (budget 5s)");
    println!("ACCEPTANCE 10 bounded-updates: PASS ({secs:.2}s)");
}

#[test]
fn acceptance_11_rk4_self_convergence() {
    let started = Instant::now();
    let ke = KineticEnergy::quadratic();
    let problem = Arc::new(Problem::quadratic_diag(vec![1.0; 3], vec![0.0; 3]).unwrap());
    let z0 = PhasePoint::new(vec![0.3, -0.2, 0.5], vec![1.0, 0.7, -0.4]);
    let end = |h: f64| {
        let flow = rk4_flow(&ke, &problem, 1.0, &z0, 1.0, h).unwrap();
        flow.last().unwrap().1.clone()
    };
    let reference = end(1e-4);
    let err_coarse = end(1e-2).distance(&reference);
    let err_fine = end(5e-3).distance(&reference);
    let factor = err_coarse / err_fine;
    assert!(
        (12.8..=19.2).contains(&factor),
        "halving h reduced the error by {factor:.2}x, outside 16 +/- 20% \
         (coarse {err_coarse:.3e}, fine {err_fine:.3e})"
    );
    // Closed form of p' = -q - p, q' = p per coordinate: eigenvalues
    // -1/2 +/- i sqrt(3)/2.
    let closed = |t: f64| {
        let omega = 3f64.sqrt() / 2.0;
        let decay = (-t / 2.0).exp();
        let c = (omega * t).cos();
        let s = (omega * t).sin() / omega;
        let p: Vec<f64> = z0
            .p
            .iter()
            .zip(&z0.q)
            .map(|(p0, q0)| decay * (p0 * c + (-p0 / 2.0 - q0) * s))
            .collect();
        let q: Vec<f64> = z0
            .p
            .iter()
            .zip(&z0.q)
            .map(|(p0, q0)| decay * (q0 * c + (p0 + q0 / 2.0) * s))
            .collect();
        PhasePoint::new(p, q)
    };
    let abs_err = end(1e-3).distance(&closed(1.0));
    assert!(abs_err <= 1e-9, "closed-form error {abs_err:.3e} at T=1, h=1e-3");
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 5.0, "criterion 11 took {secs:.1}s (budget 5s)");
    println!(
        "ACCEPTANCE 11 rk4-self-convergence: PASS (halving factor {factor:.2}, \
         closed-form err {abs_err:.2e}, {secs:.2}s)"
    );
}

#[test]
fn acceptance_12_determinism_and_schema() {
    let started = Instant::now();
    // Golden headers, pinned verbatim.
    assert_eq!(TRAJECTORY_HEADER, "k,t,F,grad_norm,H,V");
    assert_eq!(
        SUMMARY_HEADER,
        "method,seed,beta,final_F,final_grad_norm,final_V,diverged,dist_to_stationary"
    );
    assert_eq!(LONG_HEADER, "method,seed,beta,k,t,F,grad_norm,H,V");
    assert_eq!(GRID_HEADER, "method,beta,median_final_F,n_diverged,n_seeds,selected");

    let tmp = tempfile::tempdir().unwrap();
    let config = |dir: &std::path::Path| {
        format!(
            "[problem]\nkind = quadratic\ndiag = 1.0, 4.0\n\n\
             [oracle]\nsigma = 0.5\n\n\
             [kinetic]\nkind = soft_clip\n\n\
             [schedule]\nkind = harmonic\na = 0.5\nb = 2.0\n\n\
             [run]\ngamma = 1.0\nq0 = 1.5, -0.5\nmax_iter = 500\nrecord_every = 25\n\n\
             [experiment]\nseeds = 0,1,2\nmethods = shd, sgd, clipped_sgd\noutput_dir = {}\n",
            dir.display()
        )
    };
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    run_experiment(&parse_config(&config(&dir_a)).unwrap(), Some(1)).unwrap();
    run_experiment(&parse_config(&config(&dir_b)).unwrap(), Some(2)).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(&dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"summary.csv".to_string()));
    assert!(names.contains(&"traj_shd_s0.csv".to_string()));
    let mut compared = 0;
    for name in &names {
        if !name.ends_with(".csv") {
            continue;
        }
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical reruns");
        compared += 1;
    }
    assert!(compared >= 11, "expected 9 trajectory files plus summary and long");
    let traj = std::fs::read_to_string(dir_a.join("traj_shd_s0.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some(TRAJECTORY_HEADER));
    let summary = std::fs::read_to_string(dir_a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));

    // Grid-search fixtures: a universally divergent step scale is
    // excluded; equal medians resolve to the smaller beta.
    let grid_dir = tmp.path().join("grid");
    let grid_cfg = parse_config(&format!(
        "[problem]\nkind = quadratic\ndiag = 1.0, 4.0\n\n\
         [kinetic]\nkind = quadratic\n\n\
         [schedule]\nkind = constant\nalpha = 1.0\n\n\
         [run]\ngamma = 0.0\nq0 = 1.0, 1.0\nmax_iter = 400\n\n\
         [experiment]\nseeds = 0,1,2\nmethods = sgd\nbeta_grid = 3.0, 0.1, 0.01\noutput_dir = {}\n",
        grid_dir.display()
    ))
    .unwrap();
    let report = grid_search(&grid_cfg, Some(1)).unwrap();
    let mg = &report.per_method[0];
    assert_eq!(mg.rows.len(), 3, "grid rows are sorted and deduplicated");
    assert_eq!(mg.rows[2].beta, 3.0);
    assert_eq!(mg.rows[2].n_diverged, 3, "alpha*L = 12 diverges on every seed");
    assert!(mg.rows[2].median_final_f.is_infinite());
    assert_eq!(mg.selected, Some(0.1), "best finite median wins over excluded beta");
    let grid_csv = std::fs::read_to_string(grid_dir.join("grid.csv")).unwrap();
    assert_eq!(grid_csv.lines().next(), Some(GRID_HEADER));

    let tie_dir = tmp.path().join("tie");
    let tie_cfg = parse_config(&format!(
        "[problem]\nkind = quadratic\ndiag = 1.0\n\n\
         [kinetic]\nkind = quadratic\n\n\
         [schedule]\nkind = constant\nalpha = 1.0\n\n\
         [run]\ngamma = 0.0\nq0 = 0.0\nmax_iter = 5\n\n\
         [experiment]\nseeds = 0,1\nmethods = sgd\nbeta_grid = 0.4, 0.2\noutput_dir = {}\n",
        tie_dir.display()
    ))
    .unwrap();
    let report = grid_search(&tie_cfg, Some(1)).unwrap();
    assert_eq!(
        report.per_method[0].selected,
        Some(0.2),
        "started at the minimizer, both betas tie at zero; the smaller wins"
    );

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 30.0, "criterion 12 took {secs:.1}s (budget 30s)");
    println!("ACCEPTANCE 12 determinism-and-schema: PASS ({compared} files byte-identical, {secs:.2}s)");
}
