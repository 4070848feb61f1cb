//! Stochastic Hamiltonian descent.
//!
//! Momentum-style stochastic optimizers obtained by discretizing the
//! dissipative Hamiltonian system
//!
//! ```text
//! dp/dt = -grad F(q) - gamma * grad phi(p)
//! dq/dt = grad phi(p)
//! ```
//!
//! where `F` is the objective and `phi` a convex kinetic energy. The choice
//! of `phi` selects the update rule: a quadratic `phi` reproduces SGD with
//! momentum exactly, while kinetic energies with bounded gradients yield
//! normalized and soft-clipped updates whose position moves are capped by
//! the step size.
//!
//! Module map:
//! - [`kinetic`]: kinetic energies and their regularity checks
//! - [`objectives`]: test objectives and stochastic gradient oracles
//! - [`optimizer`]: the update rule, step-size schedules, and the run loop
//! - [`dynamics`]: the underlying ODE, an RK4 reference integrator, and
//!   diagnostics comparing iterate paths against the flow
//! - [`config`] and [`harness`]: experiment configuration, seeded sweeps,
//!   grid search, and CSV output

pub mod config;
pub mod dynamics;
pub mod harness;
pub mod kinetic;
pub mod objectives;
pub mod optimizer;

mod vecmath;
