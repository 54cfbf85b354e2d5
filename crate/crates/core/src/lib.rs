//! Approximate optimal value functions of finite-horizon control problems
//! as maximal subsolutions of the Hamilton-Jacobi-Bellman inequality.
//!
//! Three relaxations of the subsolution program are provided, all sharing
//! the same linear value parameterization `V(t, x) = θᵀψ(t, x) + M(x)`:
//!
//! - **LP**: the Hamiltonian is only required to be nonnegative on sampled
//!   `(t, x, u)` triples ([`solver::solve_lp`]).
//! - **guided SoS**: the Hamiltonian equals a quadratic form in a hand-built
//!   finite embedding of each sample ([`solver::guided_embedding`]).
//! - **kernel SoS**: the same, in the feature space of a positive-definite
//!   kernel, reduced to an `n × n` problem through the Gram matrix.
//!
//! The SoS programs are solved through their log-barrier Lagrange dual with
//! damped Newton iterations and a homotopy on `(λ_θ, ε)`
//! ([`solver::solve_sos`]). The [`ocp`] module provides the problems and
//! Riccati-based LQR ground truth; [`eval`] the error metrics.

pub mod assembly;
pub mod error;
pub mod eval;
pub mod features;
pub mod kernels;
pub mod ocp;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
