//! Continuous-time reference machinery.
//!
//! The optimizer discretizes the dissipative flow
//!
//! ```text
//! dp/dt = -grad F(q) - gamma * grad phi(p)
//! dq/dt = grad phi(p)
//! ```
//!
//! along which the total energy `H = F(q) + phi(p)` decays at the exact
//! rate `dH/dt = -gamma ||grad phi(p)||^2`. This module integrates that
//! flow with classical RK4 and provides the diagnostics that compare a
//! stochastic run against it: the piecewise-constant interpolation of the
//! iterates on the pseudo-time axis `t_k = sum_{i<k} alpha_i`, the
//! sup-distance between that interpolant and the flow over a window, and
//! the largest windowed accumulation of gradient noise.

use crate::kinetic::KineticEnergy;
use crate::objectives::Problem;
use crate::optimizer::{Schedule, Trajectory};
use crate::vecmath::{all_finite, norm_sq};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("step size h must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("duration must be nonnegative and finite, got {0}")]
    BadDuration(f64),
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("process must contain at least one point")]
    Empty,
    #[error("knots and points have different lengths ({knots} vs {points})")]
    LengthMismatch { knots: usize, points: usize },
    #[error("knots must be nondecreasing")]
    UnsortedKnots,
    #[error("anchor index {anchor} is out of range for {len} recorded iterates")]
    AnchorOutOfRange { anchor: usize, len: usize },
    #[error("window ends at t = {t_end} but the trajectory only reaches t = {horizon}")]
    WindowExceedsTrajectory { t_end: f64, horizon: f64 },
    #[error("diagnostic needs a trajectory recorded at every iteration")]
    NeedsDenseRecords,
    #[error("diagnostic needs a trajectory with a noise log")]
    NeedsNoiseLog,
}

/// A point `z = (p, q)` of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl PhasePoint {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Self {
        assert_eq!(p.len(), q.len(), "momentum and position dimensions differ");
        Self { p, q }
    }

    /// Euclidean distance in phase space.
    pub fn distance(&self, other: &Self) -> f64 {
        let dp: f64 = self
            .p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dq: f64 = self
            .q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (dp + dq).sqrt()
    }

    fn is_finite(&self) -> bool {
        all_finite(&self.p) && all_finite(&self.q)
    }
}

/// Right-hand side of the flow; the gradient of `F` is exact, this is the
/// deterministic limit of the stochastic updates.
pub fn ode_rhs(ke: &KineticEnergy, problem: &Problem, gamma: f64, z: &PhasePoint) -> PhasePoint {
    let phi_grad = ke.grad(&z.p);
    let f_grad = problem.grad(&z.q);
    let dp = f_grad
        .iter()
        .zip(&phi_grad)
        .map(|(fg, pg)| -fg - gamma * pg)
        .collect();
    PhasePoint { p: dp, q: phi_grad }
}

/// Total energy `H(z) = F(q) + phi(p)`.
pub fn hamiltonian(ke: &KineticEnergy, problem: &Problem, z: &PhasePoint) -> f64 {
    problem.value(&z.q) + ke.value(&z.p)
}

/// Energy above its floor, `V(z) = H(z) - F* - inf phi`; nonnegative
/// everywhere and zero only where both terms attain their infima.
pub fn lyapunov(ke: &KineticEnergy, problem: &Problem, z: &PhasePoint) -> f64 {
    hamiltonian(ke, problem, z) - problem.f_star() - ke.lower_bound()
}

fn axpy(z: &PhasePoint, s: f64, d: &PhasePoint) -> PhasePoint {
    PhasePoint {
        p: z.p.iter().zip(&d.p).map(|(a, b)| a + s * b).collect(),
        q: z.q.iter().zip(&d.q).map(|(a, b)| a + s * b).collect(),
    }
}

/// One classical RK4 step of length `h`.
fn rk4_step(
    ke: &KineticEnergy,
    problem: &Problem,
    gamma: f64,
    z: &PhasePoint,
    h: f64,
) -> PhasePoint {
    let k1 = ode_rhs(ke, problem, gamma, z);
    let k2 = ode_rhs(ke, problem, gamma, &axpy(z, 0.5 * h, &k1));
    let k3 = ode_rhs(ke, problem, gamma, &axpy(z, 0.5 * h, &k2));
    let k4 = ode_rhs(ke, problem, gamma, &axpy(z, h, &k3));
    let combo = PhasePoint {
        p: k1
            .p
            .iter()
            .zip(&k2.p)
            .zip(&k3.p)
            .zip(&k4.p)
            .map(|(((a, b), c), d)| a + 2.0 * b + 2.0 * c + d)
            .collect(),
        q: k1
            .q
            .iter()
            .zip(&k2.q)
            .zip(&k3.q)
            .zip(&k4.q)
            .map(|(((a, b), c), d)| a + 2.0 * b + 2.0 * c + d)
            .collect(),
    };
    axpy(z, h / 6.0, &combo)
}

/// Integrates the flow from `z0` over `[0, t_end]` with steps of `h` (the
/// last step may be shorter so the final time is exactly `t_end`).
/// Returns all samples including the endpoints.
pub fn rk4_flow(
    ke: &KineticEnergy,
    problem: &Problem,
    gamma: f64,
    z0: &PhasePoint,
    t_end: f64,
    h: f64,
) -> Result<Vec<(f64, PhasePoint)>, DynamicsError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(DynamicsError::BadStep(h));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(DynamicsError::BadDuration(t_end));
    }
    let n_full = (t_end / h).floor() as u64;
    let mut out = Vec::with_capacity(n_full as usize + 2);
    out.push((0.0, z0.clone()));
    let mut z = z0.clone();
    for i in 1..=n_full {
        z = rk4_step(ke, problem, gamma, &z, h);
        let t = i as f64 * h;
        if !z.is_finite() {
            return Err(DynamicsError::NonFinite { t });
        }
        out.push((t, z.clone()));
    }
    let remainder = t_end - n_full as f64 * h;
    // Skip a residual step that is pure rounding noise.
    if remainder > 1e-12 * h.max(t_end) {
        z = rk4_step(ke, problem, gamma, &z, remainder);
        if !z.is_finite() {
            return Err(DynamicsError::NonFinite { t: t_end });
        }
        out.push((t_end, z));
    } else if let Some(last) = out.last_mut() {
        last.0 = t_end;
    }
    Ok(out)
}

/// How well a sampled flow obeys the energy decay law.
#[derive(Debug, Clone, Copy)]
pub struct DissipationReport {
    /// Largest increase `H_{i+1} - H_i` between consecutive samples;
    /// nonpositive up to integrator error for an exact flow.
    pub max_energy_increase: f64,
    /// Largest relative mismatch between the numerically differentiated
    /// energy and the exact rate `-gamma ||grad phi(p)||^2`.
    pub max_rate_rel_err: f64,
}

/// Differentiates the sampled energy and compares against the exact decay
/// rate. The derivative uses the five-point fourth-order central stencil,
/// so it needs at least five uniformly spaced samples. The relative error
/// is taken only at samples whose exact rate is at least `1e-3` times the
/// largest sampled rate; below that the rate is dominated by turning
/// points where any relative measure degenerates.
pub fn dissipation_residuals(
    flow: &[(f64, PhasePoint)],
    ke: &KineticEnergy,
    problem: &Problem,
    gamma: f64,
) -> DissipationReport {
    let h_vals: Vec<f64> = flow.iter().map(|(_, z)| hamiltonian(ke, problem, z)).collect();
    let rates: Vec<f64> = flow
        .iter()
        .map(|(_, z)| -gamma * norm_sq(&ke.grad(&z.p)))
        .collect();
    let mut max_increase = f64::NEG_INFINITY;
    for w in h_vals.windows(2) {
        max_increase = max_increase.max(w[1] - w[0]);
    }
    let rate_scale = rates.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let floor = 1e-3 * rate_scale;
    let mut max_rel = 0.0_f64;
    if flow.len() >= 5 {
        let dt = flow[1].0 - flow[0].0;
        for i in 2..flow.len() - 2 {
            let exact = rates[i];
            if exact.abs() < floor {
                continue;
            }
            // The stencil needs uniform spacing; a shorter final step
            // (allowed by rk4_flow) excludes the samples that touch it.
            if ((flow[i + 2].0 - flow[i - 2].0) - 4.0 * dt).abs() > 1e-9 * dt {
                continue;
            }
            let num = (-h_vals[i + 2] + 8.0 * h_vals[i + 1] - 8.0 * h_vals[i - 1]
                + h_vals[i - 2])
                / (12.0 * dt);
            max_rel = max_rel.max((num - exact).abs() / exact.abs());
        }
    }
    DissipationReport { max_energy_increase: max_increase, max_rate_rel_err: max_rel }
}

/// Pseudo-time knots `t_0, ..., t_K` with `t_{j+1} = t_j + alpha_j`,
/// accumulated in the same order as the run loop so the two agree bitwise.
pub fn pseudo_time_knots(schedule: &Schedule, k_max: u64) -> Vec<f64> {
    let mut knots = Vec::with_capacity(k_max as usize + 1);
    let mut t = 0.0_f64;
    knots.push(t);
    for k in 0..k_max {
        t += schedule.alpha(k);
        knots.push(t);
    }
    knots
}

/// Result of locating a time among the knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeIndex {
    pub index: usize,
    /// The time lies at or past the last knot, where the right-open
    /// interval starting there is unbounded by the recorded data.
    pub beyond_end: bool,
}

/// Largest `j` with `knots[j] <= t` (0 when `t` precedes all knots), so
/// repeated knots resolve to the last of the tie. Panics on empty knots.
pub fn index_at(knots: &[f64], t: f64) -> TimeIndex {
    assert!(!knots.is_empty(), "knot list is empty");
    let pp = knots.partition_point(|&k| k <= t);
    if pp == 0 {
        TimeIndex { index: 0, beyond_end: false }
    } else {
        // Landing exactly on the final knot is a tie, not an overrun.
        let beyond = pp == knots.len() && t > knots[knots.len() - 1];
        TimeIndex { index: pp - 1, beyond_end: beyond }
    }
}

/// The piecewise-constant path through recorded iterates on the
/// pseudo-time axis: value on `[t_j, t_{j+1})` is `z_j`, and `z_0` before
/// all knots.
#[derive(Debug, Clone)]
pub struct InterpolationProcess {
    knots: Vec<f64>,
    points: Vec<PhasePoint>,
}

impl InterpolationProcess {
    pub fn new(knots: Vec<f64>, points: Vec<PhasePoint>) -> Result<Self, DynamicsError> {
        if knots.is_empty() {
            return Err(DynamicsError::Empty);
        }
        if knots.len() != points.len() {
            return Err(DynamicsError::LengthMismatch { knots: knots.len(), points: points.len() });
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(DynamicsError::UnsortedKnots);
        }
        Ok(Self { knots, points })
    }

    /// Builds the process from a run recorded at every iteration.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self, DynamicsError> {
        if traj
            .records
            .iter()
            .enumerate()
            .any(|(i, r)| r.k != i as u64)
        {
            return Err(DynamicsError::NeedsDenseRecords);
        }
        if traj.records.is_empty() {
            return Err(DynamicsError::Empty);
        }
        let knots = traj.records.iter().map(|r| r.t).collect();
        let points = traj
            .records
            .iter()
            .map(|r| PhasePoint { p: r.p.clone(), q: r.q.clone() })
            .collect();
        Self::new(knots, points)
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn point(&self, j: usize) -> &PhasePoint {
        &self.points[j]
    }

    pub fn index_at(&self, t: f64) -> TimeIndex {
        index_at(&self.knots, t)
    }

    /// Value of the process at absolute pseudo-time `t`.
    pub fn value_at(&self, t: f64) -> &PhasePoint {
        &self.points[self.index_at(t).index]
    }

    /// Value of the process restarted at iterate `anchor`: the path at
    /// `t_anchor + s`.
    pub fn shifted(&self, anchor: usize, s: f64) -> &PhasePoint {
        self.value_at(self.knots[anchor] + s)
    }
}

/// Number of intervals in the comparison grid used by
/// [`pseudotrajectory_gap`].
const GAP_GRID: usize = 1000;

/// Sup-distance over a uniform grid on `[0, window]` between the shifted
/// interpolation process started at iterate `anchor` and the exact flow
/// started from the same point, integrated by RK4 with substeps of at
/// most `h`. The trajectory must be recorded at every iteration and must
/// extend past `t_anchor + window`.
pub fn pseudotrajectory_gap(
    traj: &Trajectory,
    ke: &KineticEnergy,
    problem: &Problem,
    gamma: f64,
    anchor: usize,
    window: f64,
    h: f64,
) -> Result<f64, DynamicsError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(DynamicsError::BadStep(h));
    }
    if !(window >= 0.0) || !window.is_finite() {
        return Err(DynamicsError::BadDuration(window));
    }
    let proc = InterpolationProcess::from_trajectory(traj)?;
    if anchor >= proc.len() {
        return Err(DynamicsError::AnchorOutOfRange { anchor, len: proc.len() });
    }
    let t0 = proc.knots()[anchor];
    let horizon = *proc.knots().last().expect("nonempty");
    let end = proc.index_at(t0 + window);
    if end.beyond_end {
        return Err(DynamicsError::WindowExceedsTrajectory { t_end: t0 + window, horizon });
    }
    let mut z = proc.point(anchor).clone();
    let mut gap = 0.0_f64;
    let mut cur = 0.0;
    for i in 0..=GAP_GRID {
        let s = window * i as f64 / GAP_GRID as f64;
        let dt = s - cur;
        if dt > 0.0 {
            let substeps = (dt / h).ceil().max(1.0) as u64;
            let hh = dt / substeps as f64;
            for _ in 0..substeps {
                z = rk4_step(ke, problem, gamma, &z, hh);
            }
            if !z.is_finite() {
                return Err(DynamicsError::NonFinite { t: s });
            }
            cur = s;
        }
        gap = gap.max(z.distance(proc.value_at(t0 + s)));
    }
    Ok(gap)
}

/// Largest windowed accumulation of step-weighted gradient noise: the sup
/// over `s` in `[0, window]` of `|| sum_{i=anchor}^{m(t_anchor+s)-1}
/// alpha_i * delta_i ||` where `delta_i` is the logged noise at step `i`.
/// Requires a noise log and records at every iteration.
pub fn martingale_sup(
    traj: &Trajectory,
    anchor: usize,
    window: f64,
) -> Result<f64, DynamicsError> {
    if !(window >= 0.0) || !window.is_finite() {
        return Err(DynamicsError::BadDuration(window));
    }
    let log = traj.noise_log.as_ref().ok_or(DynamicsError::NeedsNoiseLog)?;
    let proc = InterpolationProcess::from_trajectory(traj)?;
    if anchor >= proc.len() {
        return Err(DynamicsError::AnchorOutOfRange { anchor, len: proc.len() });
    }
    let t0 = proc.knots()[anchor];
    let end = proc.index_at(t0 + window);
    if end.beyond_end {
        return Err(DynamicsError::WindowExceedsTrajectory {
            t_end: t0 + window,
            horizon: *proc.knots().last().expect("nonempty"),
        });
    }
    if log.len() < end.index || log.iter().take(end.index).enumerate().any(|(i, r)| r.k != i as u64)
    {
        return Err(DynamicsError::NeedsDenseRecords);
    }
    let dim = proc.point(anchor).p.len();
    let mut acc = vec![0.0_f64; dim];
    let mut sup = 0.0_f64;
    for rec in &log[anchor..end.index] {
        for (a, d) in acc.iter_mut().zip(&rec.delta) {
            *a += rec.alpha * d;
        }
        sup = sup.max(norm_sq(&acc).sqrt());
    }
    Ok(sup)
}
