//! Kinetic energies and their regularity checks.
//!
//! A kinetic energy is a convex, coercive function `phi` of the momentum.
//! Its gradient shapes the position update of the optimizer: for the
//! quadratic `phi(x) = ||x||^2 / 2` the update is plain momentum, while a
//! `phi` with bounded gradient caps the distance the iterate can move in
//! one step, which is how normalized and soft-clipped methods arise.
//!
//! Every energy here satisfies the same contract: it is convex, bounded
//! below by [`KineticEnergy::lower_bound`], has a gradient-Lipschitz
//! constant reported by [`KineticEnergy::grad_lipschitz`], and vanishing
//! gradient at the origin. [`KineticEnergy::check_regularity`] samples
//! these properties so callers can audit an instance numerically.

use crate::vecmath::{dot, linf, mat_vec, norm, norm_sq};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Scale beyond which `||x||^2` risks overflow, so square-root forms
/// factor out the largest entry first.
const BIG_SCALE: f64 = 1e150;

#[derive(Debug, Error, PartialEq)]
pub enum KineticError {
    #[error("kinetic parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("exponent `p` must lie in [2, 32], got {0}")]
    ExponentRange(f64),
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("matrix must be square and symmetric")]
    NotSymmetric,
    #[error("matrix must be positive definite")]
    NotPositiveDefinite,
    #[error("matrix is {rows}x{cols} but the linear term has length {len}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
}

/// How a reported constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Closed form.
    Analytic,
    /// Sampled numerically; a lower bound on the true constant.
    Estimated,
}

/// A smoothness constant together with how it was obtained.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessInfo {
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
enum Kind {
    /// `||x||^2 / 2`
    Quadratic,
    /// `<x, A x> / 2 + <b, x> + c0` with `A` symmetric positive definite.
    Anisotropic {
        a: DMatrix<f64>,
        b: DVector<f64>,
        c0: f64,
        min_value: f64,
        lambda_max: f64,
    },
    /// `c * sqrt(||x||^2 + eps)`; covers the relativistic and rescaled
    /// forms and soft clipping, which differ only in `(c, eps)`.
    ScaledSqrt { c: f64, eps: f64, name: &'static str },
    /// `ln sum_i (e^{x_i} + e^{-x_i})`, fixed dimension.
    LogSumExp { dim: usize },
    /// `||x||_p^2 / 2` for `p` in `[2, 32]`.
    HalfSquaredLp { p: f64 },
}

/// A validated kinetic energy. Construct through the named constructors;
/// invalid parameters are rejected there, never at evaluation time.
#[derive(Debug, Clone)]
pub struct KineticEnergy {
    kind: Kind,
}

impl KineticEnergy {
    /// `phi(x) = ||x||^2 / 2`. Gradient is the identity, so the optimizer
    /// reduces to SGD with momentum.
    pub fn quadratic() -> Self {
        Self { kind: Kind::Quadratic }
    }

    /// `phi(x) = <x, A x> / 2 + <b, x> + c0` for symmetric positive
    /// definite `a` given in row-major order.
    pub fn anisotropic(a: Vec<Vec<f64>>, b: Vec<f64>, c0: f64) -> Result<Self, KineticError> {
        let n = a.len();
        if n == 0 {
            return Err(KineticError::ZeroDim);
        }
        if a.iter().any(|row| row.len() != n) {
            return Err(KineticError::NotSymmetric);
        }
        if b.len() != n {
            return Err(KineticError::ShapeMismatch { rows: n, cols: n, len: b.len() });
        }
        let a = DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let scale = a.amax().max(1e-300);
        for i in 0..n {
            for j in (i + 1)..n {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(KineticError::NotSymmetric);
                }
            }
        }
        let b = DVector::from_vec(b);
        let chol = a.clone().cholesky().ok_or(KineticError::NotPositiveDefinite)?;
        // Minimizer is -A^{-1} b, so the minimum is c0 - <b, A^{-1} b> / 2.
        let center = chol.solve(&b);
        let min_value = c0 - 0.5 * b.dot(&center);
        let lambda_max = a
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        Ok(Self { kind: Kind::Anisotropic { a, b, c0, min_value, lambda_max } })
    }

    /// `phi(x) = c * sqrt(||x||^2 + (m c)^2)`, the kinetic energy of a
    /// relativistic particle with mass `m` and speed limit `c`.
    pub fn relativistic(c: f64, m: f64) -> Result<Self, KineticError> {
        require_positive("c", c)?;
        require_positive("m", m)?;
        Ok(Self { kind: Kind::ScaledSqrt { c, eps: (m * c) * (m * c), name: "relativistic" } })
    }

    /// `phi(x) = c * sqrt(||x||^2 + eps)`. Small `eps` approaches gradient
    /// normalization; the gradient norm never exceeds `c`.
    pub fn rescaled(c: f64, eps: f64) -> Result<Self, KineticError> {
        require_positive("c", c)?;
        require_positive("eps", eps)?;
        Ok(Self { kind: Kind::ScaledSqrt { c, eps, name: "rescaled" } })
    }

    /// `phi(x) = sqrt(||x||^2 + 1)`, whose gradient interpolates between
    /// the identity near the origin and normalization far from it.
    pub fn soft_clip() -> Self {
        Self { kind: Kind::ScaledSqrt { c: 1.0, eps: 1.0, name: "soft_clip" } }
    }

    /// `phi(x) = ln sum_i (e^{x_i} + e^{-x_i})` in a fixed dimension.
    /// Gradient entries lie in `(-1, 1)`, giving a per-coordinate cap.
    pub fn log_sum_exp(dim: usize) -> Result<Self, KineticError> {
        if dim == 0 {
            return Err(KineticError::ZeroDim);
        }
        Ok(Self { kind: Kind::LogSumExp { dim } })
    }

    /// `phi(x) = ||x||_p^2 / 2` for `p` in `[2, 32]`.
    pub fn half_squared_lp(p: f64) -> Result<Self, KineticError> {
        if !(2.0..=32.0).contains(&p) || !p.is_finite() {
            return Err(KineticError::ExponentRange(p));
        }
        Ok(Self { kind: Kind::HalfSquaredLp { p } })
    }

    /// Short lowercase identifier used in CSV output and logs.
    pub fn name(&self) -> &'static str {
        match &self.kind {
            Kind::Quadratic => "quadratic",
            Kind::Anisotropic { .. } => "anisotropic",
            Kind::ScaledSqrt { name, .. } => name,
            Kind::LogSumExp { .. } => "log_sum_exp",
            Kind::HalfSquaredLp { .. } => "half_squared_lp",
        }
    }

    /// Dimension the energy is pinned to, if any. Other energies accept
    /// input of any dimension.
    pub fn fixed_dim(&self) -> Option<usize> {
        match &self.kind {
            Kind::Anisotropic { a, .. } => Some(a.nrows()),
            Kind::LogSumExp { dim } => Some(*dim),
            _ => None,
        }
    }

    /// `phi(x)`. Panics if `x` violates [`Self::fixed_dim`].
    pub fn value(&self, x: &[f64]) -> f64 {
        self.check_dim(x);
        match &self.kind {
            Kind::Quadratic => 0.5 * norm_sq(x),
            Kind::Anisotropic { a, b, c0, .. } => {
                let ax = mat_vec(a, x);
                0.5 * dot(x, &ax) + dot(b.as_slice(), x) + c0
            }
            Kind::ScaledSqrt { c, eps, .. } => {
                let s = linf(x);
                if s > BIG_SCALE {
                    // Factor out the scale so the squared norm cannot overflow.
                    let n2 = x.iter().map(|v| (v / s) * (v / s)).sum::<f64>();
                    c * s * (n2 + eps / (s * s)).sqrt()
                } else {
                    c * (norm_sq(x) + eps).sqrt()
                }
            }
            Kind::LogSumExp { .. } => {
                // Shift by max |x_i| so no exponent exceeds 0.
                let m = linf(x);
                let sum: f64 = x.iter().map(|&v| (v - m).exp() + (-v - m).exp()).sum();
                m + sum.ln()
            }
            Kind::HalfSquaredLp { p } => {
                let s = linf(x);
                if s == 0.0 {
                    return 0.0;
                }
                // ||x||_p = s * (sum (|x_i|/s)^p)^{1/p}, safe from overflow.
                let sum: f64 = x.iter().map(|v| (v.abs() / s).powf(*p)).sum();
                let norm_p = s * sum.powf(1.0 / p);
                0.5 * norm_p * norm_p
            }
        }
    }

    /// `grad phi(x)`. Panics if `x` violates [`Self::fixed_dim`].
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.check_dim(x);
        match &self.kind {
            Kind::Quadratic => x.to_vec(),
            Kind::Anisotropic { a, b, .. } => {
                let mut g = mat_vec(a, x);
                for (gi, bi) in g.iter_mut().zip(b.iter()) {
                    *gi += bi;
                }
                g
            }
            Kind::ScaledSqrt { c, eps, .. } => {
                let s = linf(x);
                let denom = if s > BIG_SCALE {
                    let n2 = x.iter().map(|v| (v / s) * (v / s)).sum::<f64>();
                    s * (n2 + eps / (s * s)).sqrt()
                } else {
                    (norm_sq(x) + eps).sqrt()
                };
                x.iter().map(|v| c * v / denom).collect()
            }
            Kind::LogSumExp { .. } => {
                let m = linf(x);
                let mut den = 0.0;
                let num: Vec<f64> = x
                    .iter()
                    .map(|&v| {
                        let ep = (v - m).exp();
                        let en = (-v - m).exp();
                        den += ep + en;
                        ep - en
                    })
                    .collect();
                num.into_iter().map(|n| n / den).collect()
            }
            Kind::HalfSquaredLp { p } => {
                let s = linf(x);
                if s == 0.0 {
                    // The squared p-norm is differentiable at 0 with gradient 0.
                    return vec![0.0; x.len()];
                }
                let sum: f64 = x.iter().map(|v| (v.abs() / s).powf(*p)).sum();
                // grad_i = ||x||_p^{2-p} sign(x_i) |x_i|^{p-1}, computed with
                // the scale factored out of both norms.
                let factor = s * sum.powf((2.0 - p) / p);
                x.iter()
                    .map(|&v| {
                        if v == 0.0 {
                            0.0
                        } else {
                            factor * (v.abs() / s).powf(p - 1.0) * v.signum()
                        }
                    })
                    .collect()
            }
        }
    }

    /// Greatest lower bound of `phi`, in closed form.
    pub fn lower_bound(&self) -> f64 {
        match &self.kind {
            Kind::Quadratic | Kind::HalfSquaredLp { .. } => 0.0,
            Kind::Anisotropic { min_value, .. } => *min_value,
            Kind::ScaledSqrt { c, eps, .. } => c * eps.sqrt(),
            Kind::LogSumExp { dim } => (2.0 * *dim as f64).ln(),
        }
    }

    /// `sup_x ||grad phi(x)||` when finite. Energies with a finite bound
    /// move the iterate at most `alpha * bound` per step.
    pub fn grad_sup_norm(&self) -> Option<f64> {
        match &self.kind {
            Kind::ScaledSqrt { c, .. } => Some(*c),
            Kind::LogSumExp { .. } => Some(1.0),
            _ => None,
        }
    }

    /// Lipschitz constant of `grad phi` in the given dimension. Analytic
    /// where a closed form exists, otherwise estimated by sampling
    /// difference quotients (and then a lower bound on the true constant).
    pub fn grad_lipschitz(&self, dim: usize) -> SmoothnessInfo {
        match &self.kind {
            Kind::Quadratic => SmoothnessInfo { value: 1.0, provenance: Provenance::Analytic },
            Kind::Anisotropic { lambda_max, .. } => {
                SmoothnessInfo { value: *lambda_max, provenance: Provenance::Analytic }
            }
            // Hessian of c*sqrt(||x||^2+eps) has norm at most c/sqrt(eps),
            // attained at the origin.
            Kind::ScaledSqrt { c, eps, .. } => {
                SmoothnessInfo { value: c / eps.sqrt(), provenance: Provenance::Analytic }
            }
            Kind::LogSumExp { .. } => SmoothnessInfo { value: 1.0, provenance: Provenance::Analytic },
            Kind::HalfSquaredLp { p } => {
                if *p == 2.0 {
                    SmoothnessInfo { value: 1.0, provenance: Provenance::Analytic }
                } else {
                    SmoothnessInfo {
                        value: self.sampled_lipschitz(dim),
                        provenance: Provenance::Estimated,
                    }
                }
            }
        }
    }

    /// Largest gradient difference quotient over a fixed seeded sample of
    /// pairs at mixed scales.
    fn sampled_lipschitz(&self, dim: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_11b5);
        let radii = [0.1, 1.0, 10.0];
        let offsets = [1e-3, 0.1, 1.0];
        let mut best = 0.0_f64;
        for i in 0..3000 {
            let r = radii[i % radii.len()];
            let d = offsets[(i / radii.len()) % offsets.len()];
            let x: Vec<f64> = (0..dim).map(|_| r * rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|v| v + d * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let gap = crate::vecmath::dist(&x, &y);
            if gap == 0.0 {
                continue;
            }
            let gx = self.grad(&x);
            let gy = self.grad(&y);
            best = best.max(crate::vecmath::dist(&gx, &gy) / gap);
        }
        best
    }

    /// Samples convexity, gradient difference quotients, the lower bound,
    /// and growth along rays. All fields should hold with slack for a
    /// correctly implemented energy; the report exists so tests and the
    /// `check` command can audit instances.
    ///
    /// `max_convexity_violation` is the largest `phi(y) - phi(x) -
    /// <grad phi(y), y - x>` over sampled pairs; convexity makes it
    /// nonpositive up to rounding. `max_grad_quotient` is the largest
    /// `||grad phi(x) - grad phi(y)|| / ||x - y||`. `min_above_lower_bound`
    /// is the smallest sampled `phi(x) - lower_bound()`. `rays_monotone`
    /// checks that `phi` is nondecreasing along sampled rays at radii 10
    /// through 1000, a proxy for coercivity.
    pub fn check_regularity(&self, dim: usize, samples: usize, seed: u64) -> RegularityReport {
        let dim = self.fixed_dim().unwrap_or(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radii = [0.01, 0.3, 1.0, 3.0, 30.0];
        let mut max_violation = f64::NEG_INFINITY;
        let mut max_quotient = 0.0_f64;
        let mut min_gap = f64::INFINITY;
        let draw = |rng: &mut ChaCha8Rng, r: f64| -> Vec<f64> {
            (0..dim).map(|_| r * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        for i in 0..samples {
            let x = draw(&mut rng, radii[i % radii.len()]);
            let y = draw(&mut rng, radii[(i / radii.len() + i) % radii.len()]);
            let (px, py) = (self.value(&x), self.value(&y));
            let gy = self.grad(&y);
            let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            max_violation = max_violation.max(py - px - dot(&gy, &diff));
            min_gap = min_gap.min(px - self.lower_bound()).min(py - self.lower_bound());
            let gap = crate::vecmath::dist(&x, &y);
            if gap > 0.0 {
                let gx = self.grad(&x);
                max_quotient = max_quotient.max(crate::vecmath::dist(&gx, &gy) / gap);
            }
        }
        let mut rays_monotone = true;
        for _ in 0..8 {
            let dir = unit_vector(&mut rng, dim);
            let mut prev = f64::NEG_INFINITY;
            let mut r = 10.0;
            while r <= 1000.0 {
                let x: Vec<f64> = dir.iter().map(|d| d * r).collect();
                let v = self.value(&x);
                if v < prev {
                    rays_monotone = false;
                }
                prev = v;
                r *= 1.5;
            }
        }
        RegularityReport { max_convexity_violation: max_violation, max_grad_quotient: max_quotient, min_above_lower_bound: min_gap, rays_monotone }
    }

    fn check_dim(&self, x: &[f64]) {
        if let Some(d) = self.fixed_dim() {
            assert_eq!(x.len(), d, "kinetic energy `{}` is pinned to dimension {d}", self.name());
        }
    }
}

/// Output of [`KineticEnergy::check_regularity`].
#[derive(Debug, Clone, Copy)]
pub struct RegularityReport {
    pub max_convexity_violation: f64,
    pub max_grad_quotient: f64,
    pub min_above_lower_bound: f64,
    pub rays_monotone: bool,
}

fn require_positive(name: &'static str, value: f64) -> Result<(), KineticError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(KineticError::NonPositive { name, value })
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
