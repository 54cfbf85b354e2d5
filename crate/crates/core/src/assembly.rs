//! Finite constraint data `(a_i, b_i, c, C)` of the subsampled program.
//!
//! For sample `(t_i, x_i, u_i)`:
//!
//! ```text
//! b_i = L + ∇Mᵀf + η ΔM
//! a_i = J_ψ f + ∂ψ/∂t + η Δψ          (J_ψ: m × d Jacobian in x)
//! ```
//!
//! so that `b_i + a_iᵀθ` is the (viscous) Hamiltonian of `V_θ` at the sample.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::features::FeatureBasis;
use crate::ocp::ControlProblem;
use crate::sampling::SampleSet;
use crate::{Error, Result};

/// Which initial-state measure weights the objective `cᵀθ + C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveMode {
    /// Average of `V(t_i, x_i)` over every sample.
    #[default]
    AllSamples,
    /// Average of `V(0, x_i)`: the initial-time objective.
    InitialPoints,
}

#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    /// `n × m`, row `i` is `a_iᵀ`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    /// Constant objective offset `C`.
    pub offset: f64,
    pub eta: f64,
}

impl ConstraintSystem {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }

    /// `b + Aθ`, the Hamiltonian of `V_θ` at every sample.
    pub fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.b + &self.a * theta
    }
}

pub fn assemble(
    problem: &dyn ControlProblem,
    basis: &FeatureBasis,
    samples: &SampleSet,
    eta: f64,
    mode: ObjectiveMode,
) -> Result<ConstraintSystem> {
    let horizon = problem.horizon();
    if (basis.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(Error::Parameter(format!(
            "basis horizon {} differs from problem horizon {horizon}",
            basis.horizon()
        )));
    }
    if basis.state_dim() != problem.state_dim() {
        return Err(Error::Parameter("basis and problem state dimensions differ".into()));
    }
    if !(eta >= 0.0) {
        return Err(Error::Parameter(format!("η must be nonnegative, got {eta}")));
    }
    if samples.is_empty() {
        return Err(Error::Parameter("no samples to assemble".into()));
    }
    let (d, p, m) = (problem.state_dim(), problem.control_dim(), basis.len());

    let rows: Vec<(DVector<f64>, f64)> = samples
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if s.x.len() != d || s.u.len() != p {
                return Err(Error::Assembly {
                    index: i,
                    reason: format!("sample has (d, p) = ({}, {}), expected ({d}, {p})", s.x.len(), s.u.len()),
                });
            }
            let f = problem.dynamics(s.t, &s.x, &s.u);
            if f.len() != d {
                return Err(Error::Assembly { index: i, reason: format!("dynamics returned length {}", f.len()) });
            }
            let grad_m = problem.terminal_grad(&s.x);
            if grad_m.len() != d {
                return Err(Error::Assembly { index: i, reason: format!("∇M returned length {}", grad_m.len()) });
            }
            let fd = basis.derivatives(s.t, &s.x);
            let b = problem.running_cost(s.t, &s.x, &s.u) + grad_m.dot(&f) + eta * problem.terminal_laplacian(&s.x);
            let mut a = &fd.jacobian * &f + fd.psi_dt;
            if eta != 0.0 {
                a.axpy(eta, &fd.laplacian, 1.0);
            }
            if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Assembly { index: i, reason: "non-finite constraint data".into() });
            }
            Ok((a, b))
        })
        .collect::<Result<_>>()?;

    let n = rows.len();
    let mut a = DMatrix::zeros(n, m);
    let mut b = DVector::zeros(n);
    for (i, (row, bi)) in rows.into_iter().enumerate() {
        a.row_mut(i).copy_from(&row.transpose());
        b[i] = bi;
    }

    let weight = 1.0 / n as f64;
    let mut c = DVector::zeros(m);
    let mut offset = 0.0;
    for s in samples.iter() {
        let t = match mode {
            ObjectiveMode::AllSamples => s.t,
            ObjectiveMode::InitialPoints => 0.0,
        };
        c.axpy(weight, &basis.psi(t, &s.x), 1.0);
        offset += weight * problem.terminal_cost(&s.x);
    }
    Ok(ConstraintSystem { a, b, c, offset, eta })
}
