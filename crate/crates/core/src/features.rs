//! Separable value parameterization `V_θ(t, x) = θᵀψ(t, x) + M(x)` with
//! `ψ(t, x) = κ(t) ⊗ φ(x)`.
//!
//! Feature `i + φ_dim · j` is `φ_i(x) κ_j(t)`. Every temporal basis vanishes
//! at `t = T`, so `V_θ(T, ·) = M` for all `θ`.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ocp::{ControlProblem, ValueFunction};
use crate::{Error, Result};

/// `κ_ω(t) = sin(ωπ/2 · (t − T)/T) / ω`.
pub fn kappa(omega: usize, t: f64, horizon: f64) -> f64 {
    let w = omega as f64;
    (w * FRAC_PI_2 * (t - horizon) / horizon).sin() / w
}

/// `dκ_ω/dt = π/(2T) · cos(ωπ/2 · (t − T)/T)`.
pub fn kappa_dt(omega: usize, t: f64, horizon: f64) -> f64 {
    let w = omega as f64;
    FRAC_PI_2 / horizon * (w * FRAC_PI_2 * (t - horizon) / horizon).cos()
}

fn check_planar(x: &[f64]) -> Result<()> {
    if x.len() != 2 {
        return Err(Error::Domain(format!("quadratic monomial basis needs x ∈ ℝ², got length {}", x.len())));
    }
    Ok(())
}

/// `φ(x) = (1, x₁, x₂, x₁x₂, x₁², x₂²)`.
pub fn phi(x: &[f64]) -> Result<[f64; 6]> {
    check_planar(x)?;
    let (a, b) = (x[0], x[1]);
    Ok([1.0, a, b, a * b, a * a, b * b])
}

/// Jacobian of [`phi`], one row per monomial.
pub fn phi_grad(x: &[f64]) -> Result<[[f64; 2]; 6]> {
    check_planar(x)?;
    let (a, b) = (x[0], x[1]);
    Ok([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [b, a], [2.0 * a, 0.0], [0.0, 2.0 * b]])
}

/// Laplacians of [`phi`]; constant.
pub fn phi_laplacian(x: &[f64]) -> Result<[f64; 6]> {
    check_planar(x)?;
    Ok([0.0, 0.0, 0.0, 0.0, 2.0, 2.0])
}

/// Spatial factor `φ` of a separable basis, with analytic derivatives.
pub trait SpatialBasis: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn len(&self) -> usize;
    fn values(&self, x: &[f64]) -> DVector<f64>;
    /// `len × state_dim`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
    fn laplacians(&self, x: &[f64]) -> DVector<f64>;
}

/// The six monomials of degree ≤ 2 in two variables, see [`phi`].
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticMonomials;

impl SpatialBasis for QuadraticMonomials {
    fn state_dim(&self) -> usize {
        2
    }
    fn len(&self) -> usize {
        6
    }
    fn values(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(&phi(x).expect("state dimension checked by caller"))
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let g = phi_grad(x).expect("state dimension checked by caller");
        DMatrix::from_fn(6, 2, |i, k| g[i][k])
    }
    fn laplacians(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(&phi_laplacian(x).expect("state dimension checked by caller"))
    }
}

/// The single constant function `φ(x) = 1`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBasis {
    pub state_dim: usize,
}

impl SpatialBasis for ConstantBasis {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn len(&self) -> usize {
        1
    }
    fn values(&self, _x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, self.state_dim)
    }
    fn laplacians(&self, _x: &[f64]) -> DVector<f64> {
        DVector::zeros(1)
    }
}

/// Temporal factor `κ`, always zero at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemporalBasis {
    /// `κ_ω` for `ω = 1..=count`, see [`kappa`].
    Sine { count: usize },
    /// The single function `κ(t) = T − t`.
    Linear,
}

impl TemporalBasis {
    pub fn len(&self) -> usize {
        match *self {
            TemporalBasis::Sine { count } => count,
            TemporalBasis::Linear => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn values(&self, t: f64, horizon: f64) -> Vec<f64> {
        match *self {
            TemporalBasis::Sine { count } => (1..=count).map(|w| kappa(w, t, horizon)).collect(),
            TemporalBasis::Linear => vec![horizon - t],
        }
    }

    fn derivatives(&self, t: f64, horizon: f64) -> Vec<f64> {
        match *self {
            TemporalBasis::Sine { count } => (1..=count).map(|w| kappa_dt(w, t, horizon)).collect(),
            TemporalBasis::Linear => vec![-1.0],
        }
    }
}

/// Everything constraint assembly needs at one `(t, x)`.
#[derive(Debug, Clone)]
pub struct FeatureDerivatives {
    pub psi: DVector<f64>,
    pub psi_dt: DVector<f64>,
    /// `m × d`.
    pub jacobian: DMatrix<f64>,
    pub laplacian: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct FeatureBasis {
    temporal: TemporalBasis,
    spatial: Arc<dyn SpatialBasis>,
    horizon: f64,
}

impl FeatureBasis {
    pub fn new(temporal: TemporalBasis, spatial: Arc<dyn SpatialBasis>, horizon: f64) -> Result<Self> {
        if temporal.is_empty() || spatial.len() == 0 {
            return Err(Error::Parameter("feature basis must be nonempty".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { temporal, spatial, horizon })
    }

    /// Sine temporal basis with `m_t` terms times the quadratic monomials.
    pub fn quadratic_sine(m_t: usize, horizon: f64) -> Result<Self> {
        Self::new(TemporalBasis::Sine { count: m_t }, Arc::new(QuadraticMonomials), horizon)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn temporal(&self) -> TemporalBasis {
        self.temporal
    }

    pub fn m_t(&self) -> usize {
        self.temporal.len()
    }

    pub fn phi_dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn state_dim(&self) -> usize {
        self.spatial.state_dim()
    }

    /// Total number of features `m = φ_dim · m_t`.
    pub fn len(&self) -> usize {
        self.phi_dim() * self.m_t()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn outer(&self, kappa: &[f64], phi: &DVector<f64>) -> DVector<f64> {
        let p = phi.len();
        DVector::from_fn(self.len(), |k, _| phi[k % p] * kappa[k / p])
    }

    pub fn psi(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.outer(&self.temporal.values(t, self.horizon), &self.spatial.values(x))
    }

    pub fn psi_dt(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.outer(&self.temporal.derivatives(t, self.horizon), &self.spatial.values(x))
    }

    /// `m × d` Jacobian with respect to `x`.
    pub fn psi_jac_x(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let kappa = self.temporal.values(t, self.horizon);
        let jac = self.spatial.jacobian(x);
        let p = self.phi_dim();
        DMatrix::from_fn(self.len(), self.state_dim(), |k, l| jac[(k % p, l)] * kappa[k / p])
    }

    pub fn psi_laplacian(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.outer(&self.temporal.values(t, self.horizon), &self.spatial.laplacians(x))
    }

    /// ψ and all its derivatives with one evaluation of each factor.
    pub fn derivatives(&self, t: f64, x: &[f64]) -> FeatureDerivatives {
        let kappa = self.temporal.values(t, self.horizon);
        let kappa_dt = self.temporal.derivatives(t, self.horizon);
        let phi = self.spatial.values(x);
        let jac = self.spatial.jacobian(x);
        let lap = self.spatial.laplacians(x);
        let p = self.phi_dim();
        FeatureDerivatives {
            psi: self.outer(&kappa, &phi),
            psi_dt: self.outer(&kappa_dt, &phi),
            jacobian: DMatrix::from_fn(self.len(), self.state_dim(), |k, l| jac[(k % p, l)] * kappa[k / p]),
            laplacian: self.outer(&kappa, &lap),
        }
    }
}

/// `V_θ(t, x) = θᵀψ(t, x) + M(x)`.
#[derive(Clone)]
pub struct ValueModel<'a> {
    basis: &'a FeatureBasis,
    theta: DVector<f64>,
    problem: &'a dyn ControlProblem,
}

impl<'a> ValueModel<'a> {
    pub fn new(basis: &'a FeatureBasis, theta: DVector<f64>, problem: &'a dyn ControlProblem) -> Result<Self> {
        if theta.len() != basis.len() {
            return Err(Error::Parameter(format!("θ has length {}, basis has {} features", theta.len(), basis.len())));
        }
        if basis.state_dim() != problem.state_dim() {
            return Err(Error::Parameter("basis and problem state dimensions differ".into()));
        }
        Ok(Self { basis, theta, problem })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn basis(&self) -> &FeatureBasis {
        self.basis
    }

    pub fn value_eval(&self, t: f64, x: &[f64]) -> f64 {
        self.theta.dot(&self.basis.psi(t, x)) + self.problem.terminal_cost(x)
    }

    pub fn value_grad_x(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.basis.psi_jac_x(t, x).tr_mul(&self.theta) + self.problem.terminal_grad(x)
    }

    pub fn value_dt(&self, t: f64, x: &[f64]) -> f64 {
        self.theta.dot(&self.basis.psi_dt(t, x))
    }

    pub fn value_laplacian(&self, t: f64, x: &[f64]) -> f64 {
        self.theta.dot(&self.basis.psi_laplacian(t, x)) + self.problem.terminal_laplacian(x)
    }
}

impl ValueFunction for ValueModel<'_> {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.value_eval(t, x)
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.value_dt(t, x)
    }
    fn gradient(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.value_grad_x(t, x)
    }
}
