//! Control problems, LQR ground truth and trajectory rollouts.

mod example;
mod lqr;
mod rollout;

pub use example::{Example1, Example1Value, FnProblem, FnProblemBuilder};
pub use lqr::{algebraic_riccati_solve, lqr_value, riccati_backward_solve, LqrProblem, RiccatiSolution};
pub use rollout::{rollout, Policy, Trajectory};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Axis-aligned box `[lo_1, hi_1] × … × [lo_k, hi_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Parameter(format!(
                "box bounds need matching nonzero lengths, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Parameter("box must be finite and nonempty".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.dim() && y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn clamp(&self, y: &mut [f64]) {
        for (v, (l, h)) in y.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// The control-affine, quadratic-in-control structure `f = g(t, x) + B(t, x) u`,
/// `L = ℓ(t, x) + uᵀ R u` at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAffineQuadratic {
    pub input: DMatrix<f64>,
    pub control_weight: DMatrix<f64>,
}

/// A finite-horizon optimal control problem on `[0, T] × X × U`.
///
/// Vectors are passed as slices; `x` has length [`state_dim`](Self::state_dim)
/// and `u` length [`control_dim`](Self::control_dim).
pub trait ControlProblem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn state_box(&self) -> &Bounds;
    fn control_box(&self) -> &Bounds;

    fn dynamics(&self, t: f64, x: &[f64], u: &[f64]) -> DVector<f64>;
    fn running_cost(&self, t: f64, x: &[f64], u: &[f64]) -> f64;
    fn terminal_cost(&self, x: &[f64]) -> f64;
    fn terminal_grad(&self, x: &[f64]) -> DVector<f64>;
    fn terminal_laplacian(&self, x: &[f64]) -> f64;

    /// Closed-form control structure, when the problem has one.
    fn control_affine_quadratic(&self, _t: f64, _x: &[f64]) -> Option<ControlAffineQuadratic> {
        None
    }
}

/// Checks the structural invariants every problem must satisfy.
pub fn validate_problem(problem: &dyn ControlProblem) -> Result<()> {
    let t = problem.horizon();
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("horizon must be positive, got {t}")));
    }
    if problem.state_dim() == 0 || problem.control_dim() == 0 {
        return Err(Error::Parameter("state and control dimensions must be at least 1".into()));
    }
    if problem.state_box().dim() != problem.state_dim() {
        return Err(Error::Parameter("state box dimension mismatch".into()));
    }
    if problem.control_box().dim() != problem.control_dim() {
        return Err(Error::Parameter("control box dimension mismatch".into()));
    }
    Ok(())
}

/// A value function with the derivatives the Hamiltonian needs.
pub trait ValueFunction: Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64]) -> DVector<f64>;
}

/// `H(t, x, u) = ∂V/∂t + L(t, x, u) + ∇V(t, x)ᵀ f(t, x, u)`.
pub fn hamiltonian(problem: &dyn ControlProblem, value: &dyn ValueFunction, t: f64, x: &[f64], u: &[f64]) -> f64 {
    let f = problem.dynamics(t, x, u);
    value.time_derivative(t, x) + problem.running_cost(t, x, u) + value.gradient(t, x).dot(&f)
}
