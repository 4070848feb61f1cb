//! The update rule, step-size schedules, and the run loop.
//!
//! One step of the optimizer reads
//!
//! ```text
//! p_{k+1} = p_k - alpha_k * g(q_k, k) - alpha_k * gamma * grad phi(p_k)
//! q_{k+1} = q_k + alpha_k * grad phi(p_{k+1})
//! ```
//!
//! an implicit-explicit Euler step of the dissipative Hamiltonian flow:
//! the stochastic force and the friction are evaluated at the old state,
//! the position moves with the fresh momentum. With the quadratic kinetic
//! energy this is exactly SGD with momentum factor `1 - gamma * alpha_k`,
//! which [`momentum_step_reference`] implements independently so tests can
//! compare the two bit for bit.
//!
//! Schedules emit `alpha_0 = 0`, so iteration counters, recorded
//! pseudo-times `t_k = sum_{i<k} alpha_i`, and noise-stream indices all
//! stay aligned across restarts.

use crate::kinetic::KineticEnergy;
use crate::objectives::{NoiseModel, ObjectiveError, Oracle, Problem};
use crate::vecmath::{all_finite, dist, norm};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("schedule parameter `b` must be nonnegative, got {0}")]
    NegativeOffset(f64),
    #[error("decay exponent `rho` must lie in (0, 1], got {0}")]
    ExponentRange(f64),
    #[error("staircase period must be at least 1")]
    ZeroPeriod,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("q0 has length {got} but the problem has dimension {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("kinetic energy is pinned to dimension {ke} but the problem has dimension {problem}")]
    KineticDimMismatch { ke: usize, problem: usize },
    #[error("record_every must be at least 1")]
    ZeroRecordEvery,
    #[error("gamma must be nonnegative and finite, got {0}")]
    BadGamma(f64),
    #[error(transparent)]
    Oracle(#[from] ObjectiveError),
}

/// Step-size sequence `alpha_k`. Every schedule emits `alpha_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// `alpha_k = a / (k + b)^rho` for `k >= 1`.
    Harmonic { a: f64, b: f64, rho: f64 },
    /// `alpha_k = beta / (floor(k / period) + 1)` for `k >= 1`.
    Staircase { beta: f64, period: u64 },
    /// `alpha_k = alpha` for `k >= 1`.
    Constant { alpha: f64 },
}

/// Whether a schedule satisfies the step-size summability conditions
/// (`sum alpha_k` diverges, `sum alpha_k^2` converges) that almost-sure
/// convergence arguments need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleValidity {
    Summable,
    NotSummable,
}

impl Schedule {
    pub fn harmonic(a: f64, b: f64, rho: f64) -> Result<Self, ScheduleError> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(ScheduleError::NonPositive { name: "a", value: a });
        }
        if !(b >= 0.0) || !b.is_finite() {
            return Err(ScheduleError::NegativeOffset(b));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(ScheduleError::ExponentRange(rho));
        }
        Ok(Self::Harmonic { a, b, rho })
    }

    pub fn staircase(beta: f64, period: u64) -> Result<Self, ScheduleError> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(ScheduleError::NonPositive { name: "beta", value: beta });
        }
        if period == 0 {
            return Err(ScheduleError::ZeroPeriod);
        }
        Ok(Self::Staircase { beta, period })
    }

    pub fn constant(alpha: f64) -> Result<Self, ScheduleError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(ScheduleError::NonPositive { name: "alpha", value: alpha });
        }
        Ok(Self::Constant { alpha })
    }

    /// Step size for iteration `k`; 0 at `k = 0`.
    pub fn alpha(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        match self {
            Self::Harmonic { a, b, rho } => {
                let base = k as f64 + b;
                if *rho == 1.0 {
                    a / base
                } else {
                    a / base.powf(*rho)
                }
            }
            Self::Staircase { beta, period } => beta / ((k / period) as f64 + 1.0),
            Self::Constant { alpha } => *alpha,
        }
    }

    /// Largest step the schedule will ever emit; all three families are
    /// nonincreasing past `k = 1`.
    pub fn max_alpha(&self) -> f64 {
        self.alpha(1)
    }

    pub fn validity(&self) -> ScheduleValidity {
        match self {
            // sum 1/(k+b)^{2 rho} converges only for rho > 1/2.
            Self::Harmonic { rho, .. } => {
                if *rho > 0.5 {
                    ScheduleValidity::Summable
                } else {
                    ScheduleValidity::NotSummable
                }
            }
            // Within block j the step is beta/(j+1) over `period` entries:
            // the sum grows like a harmonic series, the square sum like
            // sum 1/j^2.
            Self::Staircase { .. } => ScheduleValidity::Summable,
            Self::Constant { .. } => ScheduleValidity::NotSummable,
        }
    }

    /// Same shape with the magnitude knob replaced, for grid search.
    pub fn with_scale(&self, beta: f64) -> Result<Self, ScheduleError> {
        match self {
            Self::Harmonic { b, rho, .. } => Self::harmonic(beta, *b, *rho),
            Self::Staircase { period, .. } => Self::staircase(beta, *period),
            Self::Constant { .. } => Self::constant(beta),
        }
    }

    /// The magnitude knob `with_scale` replaces.
    pub fn scale(&self) -> f64 {
        match self {
            Self::Harmonic { a, .. } => *a,
            Self::Staircase { beta, .. } => *beta,
            Self::Constant { alpha } => *alpha,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Harmonic { .. } => "harmonic",
            Self::Staircase { .. } => "staircase",
            Self::Constant { .. } => "constant",
        }
    }
}

/// Momentum, position, iteration counter, and accumulated pseudo-time.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub k: u64,
    pub t: f64,
}

impl OptimizerState {
    /// Fresh state at `q0` with zero momentum.
    pub fn new(q0: Vec<f64>) -> Self {
        let p = vec![0.0; q0.len()];
        Self { p, q: q0, k: 0, t: 0.0 }
    }
}

/// One optimizer step with explicit gradient callbacks. `grad_at`
/// receives the pre-step position and iteration counter; `phi_grad` is
/// called first on the old momentum (friction), then on the new momentum
/// (velocity).
pub fn step_with(
    state: &OptimizerState,
    grad_at: impl FnOnce(&[f64], u64) -> Vec<f64>,
    mut phi_grad: impl FnMut(&[f64]) -> Vec<f64>,
    gamma: f64,
    alpha: f64,
) -> OptimizerState {
    let g = grad_at(&state.q, state.k);
    let friction = phi_grad(&state.p);
    let ag = alpha * gamma;
    let p: Vec<f64> = state
        .p
        .iter()
        .zip(&g)
        .zip(&friction)
        .map(|((pi, gi), fi)| pi - alpha * gi - ag * fi)
        .collect();
    let velocity = phi_grad(&p);
    let q: Vec<f64> = state
        .q
        .iter()
        .zip(&velocity)
        .map(|(qi, vi)| qi + alpha * vi)
        .collect();
    OptimizerState { p, q, k: state.k + 1, t: state.t + alpha }
}

/// One optimizer step driven by a stochastic oracle.
pub fn step(
    state: &OptimizerState,
    oracle: &Oracle,
    kinetic: &KineticEnergy,
    gamma: f64,
    alpha: f64,
) -> OptimizerState {
    step_with(state, |q, k| oracle.stochastic_grad(q, k), |x| kinetic.grad(x), gamma, alpha)
}

/// One step of SGD with momentum written in its classical form,
/// `p_{k+1} = (1 - gamma alpha_k) p_k - alpha_k g`, `q_{k+1} = q_k +
/// alpha_k p_{k+1}`, with the damping applied as a separate subtraction so
/// the arithmetic matches [`step`] under the quadratic kinetic energy
/// operation for operation.
pub fn momentum_step_reference(
    state: &OptimizerState,
    oracle: &Oracle,
    gamma: f64,
    alpha: f64,
) -> OptimizerState {
    let g = oracle.stochastic_grad(&state.q, state.k);
    let ag = alpha * gamma;
    let p: Vec<f64> = state
        .p
        .iter()
        .zip(&g)
        .map(|(pi, gi)| pi - alpha * gi - ag * pi)
        .collect();
    let q: Vec<f64> = state.q.iter().zip(&p).map(|(qi, pi)| qi + alpha * pi).collect();
    OptimizerState { p, q, k: state.k + 1, t: state.t + alpha }
}

/// Everything needed to reproduce one optimizer run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: Arc<Problem>,
    pub noise: NoiseModel,
    pub kinetic: KineticEnergy,
    pub schedule: Schedule,
    pub gamma: f64,
    pub q0: Vec<f64>,
    pub max_iter: u64,
    pub seed: u64,
    /// Keep every `record_every`-th iterate (plus the first and last).
    pub record_every: u64,
    /// Also log `alpha_k` and the gradient noise `g - grad F` per step,
    /// which diagnostics over the noise process need.
    pub log_noise: bool,
}

/// One recorded iterate with derived scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub k: u64,
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// `F(q)`.
    pub f: f64,
    /// `||grad F(q)||`.
    pub grad_norm: f64,
    /// Total energy `F(q) + phi(p)`.
    pub h: f64,
    /// Energy above its floor, `H - F* - inf phi`.
    pub v: f64,
}

/// Step size and gradient noise for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub k: u64,
    pub alpha: f64,
    /// `g(q_k, k) - grad F(q_k)`.
    pub delta: Vec<f64>,
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// The state left the representable range; the final record holds the
    /// first non-finite iterate.
    pub diverged: bool,
    pub noise_log: Option<Vec<NoiseRecord>>,
    /// Largest `||q_{k+1} - q_k|| / alpha_k` over steps with
    /// `alpha_k > 0`. Bounded-gradient kinetic energies cap this by
    /// `sup ||grad phi||`.
    pub max_speed_ratio: f64,
}

impl Trajectory {
    pub fn final_record(&self) -> &TrajectoryRecord {
        self.records.last().expect("a trajectory always has records")
    }
}

/// Runs the optimizer. Divergence is reported in the output, not as an
/// error; errors are reserved for inconsistent configuration.
pub fn run(cfg: &RunConfig) -> Result<Trajectory, RunError> {
    let dim = cfg.problem.dim();
    if cfg.q0.len() != dim {
        return Err(RunError::DimMismatch { got: cfg.q0.len(), want: dim });
    }
    if let Some(ke_dim) = cfg.kinetic.fixed_dim() {
        if ke_dim != dim {
            return Err(RunError::KineticDimMismatch { ke: ke_dim, problem: dim });
        }
    }
    if cfg.record_every == 0 {
        return Err(RunError::ZeroRecordEvery);
    }
    if !(cfg.gamma >= 0.0) || !cfg.gamma.is_finite() {
        return Err(RunError::BadGamma(cfg.gamma));
    }
    if cfg.schedule.validity() == ScheduleValidity::NotSummable {
        log::warn!(
            "schedule `{}` does not satisfy the step-size summability conditions; \
             almost-sure convergence is not guaranteed",
            cfg.schedule.name()
        );
    }
    if cfg.gamma * cfg.schedule.max_alpha() >= 1.0 {
        log::warn!(
            "gamma * alpha reaches {:.3} >= 1: friction overshoots and the \
             discretization may be unstable",
            cfg.gamma * cfg.schedule.max_alpha()
        );
    }

    let oracle = Oracle::new(cfg.problem.clone(), cfg.noise.clone(), cfg.seed)?;
    let mut state = OptimizerState::new(cfg.q0.clone());
    let mut records = Vec::with_capacity((cfg.max_iter / cfg.record_every + 2) as usize);
    records.push(make_record(&state, cfg));
    let mut noise_log = cfg.log_noise.then(|| Vec::with_capacity(cfg.max_iter as usize));
    let mut diverged = false;
    let mut max_speed_ratio = 0.0_f64;

    for k in 0..cfg.max_iter {
        let alpha = cfg.schedule.alpha(k);
        let next = if let Some(log) = noise_log.as_mut() {
            let g = oracle.stochastic_grad(&state.q, k);
            let exact = cfg.problem.grad(&state.q);
            let delta = g.iter().zip(&exact).map(|(a, b)| a - b).collect();
            log.push(NoiseRecord { k, alpha, delta });
            step_with(&state, move |_, _| g, |x| cfg.kinetic.grad(x), cfg.gamma, alpha)
        } else {
            step(&state, &oracle, &cfg.kinetic, cfg.gamma, alpha)
        };
        if alpha > 0.0 {
            let ratio = dist(&next.q, &state.q) / alpha;
            max_speed_ratio = max_speed_ratio.max(ratio);
        }
        state = next;
        if !(all_finite(&state.p) && all_finite(&state.q)) {
            records.push(make_record(&state, cfg));
            diverged = true;
            break;
        }
        if state.k % cfg.record_every == 0 || state.k == cfg.max_iter {
            records.push(make_record(&state, cfg));
        }
    }

    Ok(Trajectory { records, diverged, noise_log, max_speed_ratio })
}

fn make_record(state: &OptimizerState, cfg: &RunConfig) -> TrajectoryRecord {
    let f = cfg.problem.value(&state.q);
    let grad_norm = norm(&cfg.problem.grad(&state.q));
    let h = f + cfg.kinetic.value(&state.p);
    let v = h - cfg.problem.f_star() - cfg.kinetic.lower_bound();
    TrajectoryRecord {
        k: state.k,
        t: state.t,
        q: state.q.clone(),
        p: state.p.clone(),
        f,
        grad_norm,
        h,
        v,
    }
}
