//! Test objectives and stochastic gradient oracles.
//!
//! A [`Problem`] bundles an objective `F` with its analytic gradient, its
//! minimum value, a gradient-Lipschitz constant, and (when known) its
//! stationary points. An [`Oracle`] wraps a problem with a noise model and
//! produces stochastic gradients `g(q, k)` that are a deterministic
//! function of `(seed, k, q)`: iteration `k` selects an independent
//! counter-based RNG stream, so runs replay bitwise and different
//! iterations never share noise.

use crate::kinetic::{Provenance, SmoothnessInfo};
use crate::vecmath::{dot, mat_vec, norm, norm_sq};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;
use thiserror::Error;

/// Four linearly separable points in the plane; shipped as a versioned
/// table so gradient values in tests stay byte-stable.
pub const LOGISTIC_FIXTURE_V1: &str = include_str!("../data/logistic_fixture_v1.txt");

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("matrix must be square and symmetric")]
    NotSymmetric,
    #[error("matrix must be positive definite")]
    NotPositiveDefinite,
    #[error("matrix is {rows}x{cols} but the linear term has length {len}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("dataset row {row}: label must be -1 or 1, got {value}")]
    BadLabel { row: usize, value: f64 },
    #[error("dataset row {row}: expected {want} feature columns, got {got}")]
    RaggedRow { row: usize, want: usize, got: usize },
    #[error("dataset row {row}: could not parse `{token}` as a number")]
    ParseNumber { row: usize, token: String },
    #[error("dataset must contain at least {min} examples")]
    TooFewExamples { min: usize },
    #[error("ridge weight `mu` must be positive, got {0}")]
    NonPositiveRidge(f64),
    #[error("noise level `sigma` must be nonnegative and finite, got {0}")]
    BadSigma(f64),
    #[error("batch size {batch} must lie in 1..={n}")]
    BatchSize { batch: usize, n: usize },
    #[error("mini-batch noise requires a finite-sum objective, `{0}` is not one")]
    NotFiniteSum(&'static str),
}

#[derive(Debug, Clone)]
enum PKind {
    Quadratic { a: DMatrix<f64>, b: DVector<f64> },
    Rosenbrock,
    Rastrigin,
    Logistic { xs: Vec<Vec<f64>>, ys: Vec<f64>, mu: f64 },
}

/// An objective `F` with analytic gradient and reference constants.
#[derive(Debug, Clone)]
pub struct Problem {
    kind: PKind,
    dim: usize,
    f_star: f64,
    lipschitz: SmoothnessInfo,
    stationary: Option<Vec<Vec<f64>>>,
    sample_box: (f64, f64),
    coercivity_radius: f64,
}

impl Problem {
    /// `F(q) = <q, A q> / 2 - <b, q>` for symmetric positive definite `A`
    /// given in row-major order. Minimum at `A^{-1} b`.
    pub fn quadratic(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self, ObjectiveError> {
        let n = a.len();
        if n == 0 {
            return Err(ObjectiveError::ZeroDim);
        }
        if a.iter().any(|row| row.len() != n) {
            return Err(ObjectiveError::NotSymmetric);
        }
        if b.len() != n {
            return Err(ObjectiveError::ShapeMismatch { rows: n, cols: n, len: b.len() });
        }
        let a = DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let scale = a.amax().max(1e-300);
        for i in 0..n {
            for j in (i + 1)..n {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(ObjectiveError::NotSymmetric);
                }
            }
        }
        let b = DVector::from_vec(b);
        let chol = a.clone().cholesky().ok_or(ObjectiveError::NotPositiveDefinite)?;
        let qstar = chol.solve(&b);
        let f_star = -0.5 * b.dot(&qstar);
        let lambda_max = a
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let radius = 2.0 * qstar.norm() + 10.0;
        Ok(Self {
            kind: PKind::Quadratic { a, b },
            dim: n,
            f_star,
            lipschitz: SmoothnessInfo { value: lambda_max, provenance: Provenance::Analytic },
            stationary: Some(vec![qstar.as_slice().to_vec()]),
            sample_box: (-10.0, 10.0),
            coercivity_radius: radius,
        })
    }

    /// Quadratic with diagonal `A`.
    pub fn quadratic_diag(diag: Vec<f64>, b: Vec<f64>) -> Result<Self, ObjectiveError> {
        let n = diag.len();
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self::quadratic(a, b)
    }

    /// The two-dimensional banana valley `(1 - x)^2 + 100 (y - x^2)^2`,
    /// minimized at `(1, 1)`.
    pub fn rosenbrock() -> Self {
        // Spectral norm of the Hessian sampled over a grid on the box.
        let mut l = 0.0_f64;
        for i in 0..=200 {
            for j in 0..=200 {
                let x = -2.0 + 4.0 * i as f64 / 200.0;
                let y = -2.0 + 4.0 * j as f64 / 200.0;
                let hxx = 2.0 - 400.0 * y + 1200.0 * x * x;
                let hxy = -400.0 * x;
                let hyy = 200.0;
                l = l.max(sym2_spectral_norm(hxx, hxy, hyy));
            }
        }
        Self {
            kind: PKind::Rosenbrock,
            dim: 2,
            f_star: 0.0,
            lipschitz: SmoothnessInfo { value: l, provenance: Provenance::Estimated },
            stationary: Some(vec![vec![1.0, 1.0]]),
            sample_box: (-2.0, 2.0),
            coercivity_radius: 10.0,
        }
    }

    /// The separable multimodal objective
    /// `10 d + sum_i (q_i^2 - 10 cos(2 pi q_i))`, minimized at the origin.
    pub fn rastrigin(dim: usize) -> Result<Self, ObjectiveError> {
        if dim == 0 {
            return Err(ObjectiveError::ZeroDim);
        }
        // The Hessian is diagonal with entries 2 + 40 pi^2 cos(2 pi q_i),
        // so a one-dimensional grid that includes q = 0 finds the max.
        let mut l = 0.0_f64;
        for i in -512_i64..=512 {
            let x = i as f64 * 0.01;
            l = l.max((2.0 + 40.0 * std::f64::consts::PI.powi(2) * (2.0 * std::f64::consts::PI * x).cos()).abs());
        }
        Ok(Self {
            kind: PKind::Rastrigin,
            dim,
            f_star: 0.0,
            lipschitz: SmoothnessInfo { value: l, provenance: Provenance::Estimated },
            stationary: Some(vec![vec![0.0; dim]]),
            sample_box: (-5.12, 5.12),
            coercivity_radius: 16.0 * (dim as f64).sqrt(),
        })
    }

    /// Ridge-regularized logistic regression
    /// `F(q) = mean_i ln(1 + e^{-y_i <x_i, q>}) + mu ||q||^2 / 2`
    /// over rows `(features, label)` with labels in `{-1, 1}`. The ridge
    /// weight must be positive so the minimum exists and is unique; it is
    /// located by Newton iteration at construction.
    pub fn logistic(rows: Vec<(Vec<f64>, f64)>, mu: f64) -> Result<Self, ObjectiveError> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(ObjectiveError::NonPositiveRidge(mu));
        }
        if rows.len() < 2 {
            return Err(ObjectiveError::TooFewExamples { min: 2 });
        }
        let dim = rows[0].0.len();
        if dim == 0 {
            return Err(ObjectiveError::ZeroDim);
        }
        let mut xs = Vec::with_capacity(rows.len());
        let mut ys = Vec::with_capacity(rows.len());
        for (row, (x, y)) in rows.into_iter().enumerate() {
            if x.len() != dim {
                return Err(ObjectiveError::RaggedRow { row, want: dim, got: x.len() });
            }
            if y != 1.0 && y != -1.0 {
                return Err(ObjectiveError::BadLabel { row, value: y });
            }
            xs.push(x);
            ys.push(y);
        }
        // L = mu + lambda_max((1/4n) sum x x^T): the per-example loss has
        // curvature at most 1/4 along x_i.
        let n = xs.len();
        let mut gram = DMatrix::zeros(dim, dim);
        for x in &xs {
            let v = DVector::from_column_slice(x);
            gram += &v * v.transpose();
        }
        gram /= 4.0 * n as f64;
        let lambda_max = gram
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let kind = PKind::Logistic { xs, ys, mu };
        let mut problem = Self {
            kind,
            dim,
            f_star: f64::NEG_INFINITY,
            lipschitz: SmoothnessInfo { value: mu + lambda_max, provenance: Provenance::Analytic },
            stationary: None,
            sample_box: (-10.0, 10.0),
            coercivity_radius: 10.0 / mu.min(1.0),
        };
        let qstar = problem.newton_minimum();
        problem.f_star = problem.value(&qstar);
        problem.stationary = Some(vec![qstar]);
        Ok(problem)
    }

    /// Logistic regression on the built-in fixture table.
    pub fn logistic_fixture(mu: f64) -> Result<Self, ObjectiveError> {
        Self::logistic(parse_examples(LOGISTIC_FIXTURE_V1)?, mu)
    }

    /// Logistic regression on two seeded Gaussian clusters with centers
    /// `+-1.5 / sqrt(dim) * (1, ..., 1)` and unit-ish spread; labels
    /// alternate so both classes are present for any `n >= 2`.
    pub fn logistic_synthetic(
        n: usize,
        dim: usize,
        seed: u64,
        mu: f64,
    ) -> Result<Self, ObjectiveError> {
        if n < 2 {
            return Err(ObjectiveError::TooFewExamples { min: 2 });
        }
        if dim == 0 {
            return Err(ObjectiveError::ZeroDim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = 1.5 / (dim as f64).sqrt();
        let rows = (0..n)
            .map(|i| {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                let x = (0..dim)
                    .map(|_| y * shift + 0.8 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (x, y)
            })
            .collect();
        Self::logistic(rows, mu)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Minimum value of `F`.
    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// Gradient-Lipschitz constant over the relevant region.
    pub fn lipschitz(&self) -> SmoothnessInfo {
        self.lipschitz
    }

    /// Known stationary points, if any.
    pub fn stationary_points(&self) -> Option<&[Vec<f64>]> {
        self.stationary.as_deref()
    }

    /// Per-coordinate bounds tests draw sample points from.
    pub fn sample_box(&self) -> (f64, f64) {
        self.sample_box
    }

    /// Radius beyond which `F` grows along every ray; a coercivity proxy.
    pub fn coercivity_radius(&self) -> f64 {
        self.coercivity_radius
    }

    /// Number of summands for finite-sum objectives.
    pub fn n_examples(&self) -> Option<usize> {
        match &self.kind {
            PKind::Logistic { xs, .. } => Some(xs.len()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match &self.kind {
            PKind::Quadratic { .. } => "quadratic",
            PKind::Rosenbrock => "rosenbrock",
            PKind::Rastrigin => "rastrigin",
            PKind::Logistic { .. } => "logistic",
        }
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        assert_eq!(q.len(), self.dim, "point has wrong dimension for `{}`", self.name());
        match &self.kind {
            PKind::Quadratic { a, b } => {
                let aq = mat_vec(a, q);
                0.5 * dot(q, &aq) - dot(b.as_slice(), q)
            }
            PKind::Rosenbrock => {
                let (x, y) = (q[0], q[1]);
                (1.0 - x) * (1.0 - x) + 100.0 * (y - x * x) * (y - x * x)
            }
            PKind::Rastrigin => {
                let tau = 2.0 * std::f64::consts::PI;
                10.0 * self.dim as f64
                    + q.iter().map(|&x| x * x - 10.0 * (tau * x).cos()).sum::<f64>()
            }
            PKind::Logistic { xs, ys, mu } => {
                let n = xs.len() as f64;
                let data: f64 = xs
                    .iter()
                    .zip(ys)
                    .map(|(x, y)| softplus(-y * dot(x, q)))
                    .sum();
                data / n + 0.5 * mu * norm_sq(q)
            }
        }
    }

    pub fn grad(&self, q: &[f64]) -> Vec<f64> {
        assert_eq!(q.len(), self.dim, "point has wrong dimension for `{}`", self.name());
        match &self.kind {
            PKind::Quadratic { a, b } => {
                let mut g = mat_vec(a, q);
                for (gi, bi) in g.iter_mut().zip(b.iter()) {
                    *gi -= bi;
                }
                g
            }
            PKind::Rosenbrock => {
                let (x, y) = (q[0], q[1]);
                vec![
                    -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                    200.0 * (y - x * x),
                ]
            }
            PKind::Rastrigin => {
                let tau = 2.0 * std::f64::consts::PI;
                q.iter().map(|&x| 2.0 * x + 10.0 * tau * (tau * x).sin()).collect()
            }
            PKind::Logistic { xs, ys, mu } => {
                let n = xs.len() as f64;
                let mut g = vec![0.0; q.len()];
                for (x, y) in xs.iter().zip(ys) {
                    let w = -y * sigmoid(-y * dot(x, q)) / n;
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi += w * xi;
                    }
                }
                for (gi, qi) in g.iter_mut().zip(q) {
                    *gi += mu * qi;
                }
                g
            }
        }
    }

    /// `2 L (F(q) - F*) - ||grad F(q)||^2`, which is nonnegative for an
    /// `L`-smooth objective with minimum `F*`.
    pub fn smoothness_gap(&self, q: &[f64]) -> f64 {
        2.0 * self.lipschitz.value * (self.value(q) - self.f_star) - norm_sq(&self.grad(q))
    }

    /// Distance from `q` to the nearest known stationary point.
    pub fn distance_to_stationary(&self, q: &[f64]) -> Option<f64> {
        self.stationary.as_ref().map(|pts| {
            pts.iter()
                .map(|p| crate::vecmath::dist(p, q))
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// Gradient of one summand of a finite-sum objective, including the
    /// regularizer. Only defined for finite-sum kinds.
    fn example_grad(&self, idx: usize, q: &[f64]) -> Vec<f64> {
        match &self.kind {
            PKind::Logistic { xs, ys, mu } => {
                let (x, y) = (&xs[idx], ys[idx]);
                let w = -y * sigmoid(-y * dot(x, q));
                x.iter()
                    .zip(q)
                    .map(|(xi, qi)| w * xi + mu * qi)
                    .collect()
            }
            _ => unreachable!("example_grad on a non-finite-sum objective"),
        }
    }

    /// Newton iteration for the logistic minimum; the objective is smooth
    /// and `mu`-strongly convex, so this converges from the origin.
    fn newton_minimum(&self) -> Vec<f64> {
        let (xs, ys, mu) = match &self.kind {
            PKind::Logistic { xs, ys, mu } => (xs, ys, *mu),
            _ => unreachable!(),
        };
        let n = xs.len() as f64;
        let mut q = vec![0.0; self.dim];
        for _ in 0..200 {
            let g = self.grad(&q);
            if norm(&g) <= 1e-14 {
                break;
            }
            let mut h = DMatrix::from_diagonal_element(self.dim, self.dim, mu);
            for (x, y) in xs.iter().zip(ys) {
                let s = sigmoid(-y * dot(x, &q));
                let w = s * (1.0 - s) / n;
                let v = DVector::from_column_slice(x);
                h += w * &v * v.transpose();
            }
            let step = h
                .cholesky()
                .expect("logistic Hessian with ridge is positive definite")
                .solve(&DVector::from_column_slice(&g));
            // Backtrack if a full step overshoots; rare for this problem.
            let f0 = self.value(&q);
            let mut scale = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> =
                    q.iter().zip(step.iter()).map(|(qi, si)| qi - scale * si).collect();
                if self.value(&trial) <= f0 {
                    q = trial;
                    break;
                }
                scale *= 0.5;
            }
        }
        q
    }
}

/// Noise attached to gradient evaluations.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// `g = grad F(q) + sigma * xi` with standard Gaussian `xi`.
    AdditiveGaussian { sigma: f64 },
    /// Mean gradient over a uniformly sampled batch of examples, without
    /// replacement. Requires a finite-sum objective.
    MiniBatch { batch_size: usize },
}

/// A problem plus a noise model and a seed. Stochastic gradients are a
/// pure function of `(seed, k, q)`: iteration `k` indexes an independent
/// RNG stream, so the same call always returns the same bits.
#[derive(Debug, Clone)]
pub struct Oracle {
    problem: Arc<Problem>,
    noise: NoiseModel,
    seed: u64,
}

impl Oracle {
    pub fn new(
        problem: Arc<Problem>,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self, ObjectiveError> {
        match &noise {
            NoiseModel::AdditiveGaussian { sigma } => {
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(ObjectiveError::BadSigma(*sigma));
                }
            }
            NoiseModel::MiniBatch { batch_size } => {
                let n = problem
                    .n_examples()
                    .ok_or(ObjectiveError::NotFiniteSum(problem.name()))?;
                if *batch_size == 0 || *batch_size > n {
                    return Err(ObjectiveError::BatchSize { batch: *batch_size, n });
                }
            }
        }
        Ok(Self { problem, noise, seed })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stochastic gradient at `q` for iteration `k`.
    pub fn stochastic_grad(&self, q: &[f64], k: u64) -> Vec<f64> {
        match &self.noise {
            NoiseModel::AdditiveGaussian { sigma } => {
                let mut g = self.problem.grad(q);
                if *sigma > 0.0 {
                    let mut rng = self.stream(k);
                    for gi in g.iter_mut() {
                        *gi += sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                g
            }
            NoiseModel::MiniBatch { batch_size } => {
                let n = self.problem.n_examples().expect("validated at construction");
                let mut rng = self.stream(k);
                let idx = rand::seq::index::sample(&mut rng, n, *batch_size);
                let mut g = vec![0.0; q.len()];
                for i in idx {
                    let gi = self.problem.example_grad(i, q);
                    for (acc, v) in g.iter_mut().zip(&gi) {
                        *acc += v;
                    }
                }
                let inv = 1.0 / *batch_size as f64;
                for v in g.iter_mut() {
                    *v *= inv;
                }
                g
            }
        }
    }

    fn stream(&self, k: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k);
        rng
    }
}

/// Parses a whitespace-separated table of `feature... label` rows.
/// Blank lines and `#` comments are skipped.
pub fn parse_examples(text: &str) -> Result<Vec<(Vec<f64>, f64)>, ObjectiveError> {
    let mut rows = Vec::new();
    let mut want: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut nums = Vec::new();
        for token in line.split_whitespace() {
            let v: f64 = token
                .parse()
                .map_err(|_| ObjectiveError::ParseNumber { row: lineno + 1, token: token.to_string() })?;
            nums.push(v);
        }
        if nums.len() < 2 {
            return Err(ObjectiveError::RaggedRow {
                row: lineno + 1,
                want: want.map_or(2, |w| w + 1),
                got: nums.len(),
            });
        }
        let label = nums.pop().unwrap();
        if label != 1.0 && label != -1.0 {
            return Err(ObjectiveError::BadLabel { row: lineno + 1, value: label });
        }
        match want {
            None => want = Some(nums.len()),
            Some(w) if w != nums.len() => {
                return Err(ObjectiveError::RaggedRow { row: lineno + 1, want: w + 1, got: nums.len() + 1 })
            }
            _ => {}
        }
        rows.push((nums, label));
    }
    if rows.len() < 2 {
        return Err(ObjectiveError::TooFewExamples { min: 2 });
    }
    Ok(rows)
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 35.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-u})` without overflow.
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Spectral norm of the symmetric 2x2 matrix `[[a, b], [b, d]]`.
fn sym2_spectral_norm(a: f64, b: f64, d: f64) -> f64 {
    let mean = 0.5 * (a + d);
    let disc = (0.5 * (a - d)).hypot(b);
    (mean + disc).abs().max((mean - disc).abs())
}
