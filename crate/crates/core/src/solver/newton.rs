use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::dual::{gradient_with_barrier, objective_with_barrier, Barrier, DualParams, NewtonMatrix};
use super::{Diagnostics, FeatureMatrix, NewtonOptions, Solution};
use crate::assembly::ConstraintSystem;
use crate::{Error, Result};

/// One Newton iteration, recorded at its starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonRecord {
    pub objective: f64,
    pub decrement: f64,
    /// Step length actually taken along the Newton direction.
    pub step: f64,
}

#[derive(Clone)]
pub struct DualState {
    pub alpha: DVector<f64>,
    pub objective: f64,
    pub decrement: f64,
    /// Newton steps taken.
    pub iterations: usize,
    pub history: Vec<NewtonRecord>,
    pub(crate) barrier: Barrier,
    pub(crate) is_explicit: bool,
}

impl std::fmt::Debug for DualState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualState")
            .field("objective", &self.objective)
            .field("decrement", &self.decrement)
            .field("iterations", &self.iterations)
            .finish_non_exhaustive()
    }
}

impl DualState {
    /// `U(α) = λI + ΦᵀDiag(α)Φ` for explicit features; the kernel path only
    /// factorizes a reduced matrix and returns `None`.
    pub fn u_matrix(&self) -> Option<DMatrix<f64>> {
        self.is_explicit.then(|| {
            let l = self.barrier.chol.l();
            &l * l.transpose()
        })
    }

    /// `Φ_iᵀ U(α)⁻¹ Φ_i` for every sample.
    pub fn leverages(&self) -> DVector<f64> {
        self.barrier.g_diag()
    }
}

/// Relative slack allowed on `F` when accepting a step, to absorb rounding.
const DESCENT_SLACK: f64 = 1e-13;
const MAX_HALVINGS: usize = 60;
const ARMIJO: f64 = 0.25;

/// Damped Newton on `F` from `α₀`: `α ← α + Δα / (1 + λ(α))` with
/// `λ(α) = √(Δαᵀ F″ Δα / ε)`, until `λ(α) ≤ tol`.
///
/// Far from the optimum the damped step `1 / (1 + λ)` is tiny, so longer
/// steps along `Δα` are tried first and kept when they satisfy an Armijo
/// condition. The damped step stays in the barrier domain and decreases `F`
/// in exact arithmetic; should rounding break either, it is halved.
pub fn damped_newton(
    cs: &ConstraintSystem,
    phi: &FeatureMatrix,
    params: &DualParams,
    opts: &NewtonOptions,
    alpha0: &DVector<f64>,
) -> Result<DualState> {
    params.validate()?;
    if phi.n() != cs.n() || alpha0.len() != cs.n() {
        return Err(Error::Parameter("dimension mismatch between constraints, features and α₀".into()));
    }
    let (mut objective, mut barrier) = objective_with_barrier(cs, phi, params, alpha0)
        .ok_or_else(|| Error::Domain("U(α₀) is not positive definite".into()))?;
    let mut alpha = alpha0.clone();
    let mut history = Vec::new();

    for iteration in 0..=opts.max_iters {
        let grad = gradient_with_barrier(cs, params, &alpha, &barrier);
        let hess = NewtonMatrix::build(cs, params, &barrier, opts.system);
        let (direction, ridge) = hess.solve(&(-grad))?;
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Newton direction".into()));
        }
        let decrement = (hess.quadratic_form(&direction).max(0.0) / params.epsilon).sqrt();
        if decrement <= opts.tol && ridge == 0.0 {
            history.push(NewtonRecord { objective, decrement, step: 0.0 });
            return Ok(DualState {
                alpha,
                objective,
                decrement,
                iterations: iteration,
                history,
                barrier,
                is_explicit: matches!(phi, FeatureMatrix::Explicit(_)),
            });
        }
        if iteration == opts.max_iters {
            return Err(Error::Convergence { iterations: iteration, decrement });
        }

        // Full Newton steps with Armijo backtracking while they beat the damped
        // step, then the damped step itself.
        let damped = 1.0 / (1.0 + decrement);
        let slope = -hess.quadratic_form(&direction);
        let mut accepted = None;
        let mut step = long_step_limit(phi, &barrier, &direction);
        while step > damped {
            let candidate = &alpha + &direction * step;
            if let Some((f, b)) = objective_with_barrier(cs, phi, params, &candidate) {
                if f <= objective + ARMIJO * step * slope {
                    accepted = Some((candidate, f, b, step));
                    break;
                }
            }
            step *= 0.5;
        }
        if accepted.is_none() {
            step = damped;
            for _ in 0..MAX_HALVINGS {
                let candidate = &alpha + &direction * step;
                if let Some((f, b)) = objective_with_barrier(cs, phi, params, &candidate) {
                    if f <= objective + DESCENT_SLACK * (1.0 + objective.abs()) {
                        accepted = Some((candidate, f, b, step));
                        break;
                    }
                }
                step *= 0.5;
            }
        }
        let Some((candidate, f, b, step)) = accepted else {
            return Err(Error::Convergence { iterations: iteration, decrement });
        };
        history.push(NewtonRecord { objective, decrement, step });
        alpha = candidate;
        objective = f;
        barrier = b;
    }
    unreachable!("the loop returns at iteration max_iters")
}

/// Fraction of `U` that one long step may remove in any direction.
const MAX_SHRINK: f64 = 0.5;

/// Longest step `t ≤ 1` with `U(α + tΔα) ⪰ (1 − MAX_SHRINK) U(α)`, so long
/// steps cannot run into the boundary of the barrier domain. Explicit
/// features only; the kernel path returns 1.
fn long_step_limit(phi: &FeatureMatrix, barrier: &Barrier, direction: &DVector<f64>) -> f64 {
    if !matches!(phi, FeatureMatrix::Explicit(_)) {
        return 1.0;
    }
    let y = &barrier.y;
    let mut m = y.transpose() * DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] * direction[i]);
    super::dual::symmetrize(&mut m);
    let lowest = m.symmetric_eigenvalues().min();
    if lowest >= -MAX_SHRINK {
        1.0
    } else {
        MAX_SHRINK / -lowest
    }
}

/// `θ* = (c + Aᵀα*) / (2λ_θ)`, `B* = ε U(α*)⁻¹`, `δ* = −α* / (2γ)`.
pub fn recover_primal(
    cs: &ConstraintSystem,
    phi: &FeatureMatrix,
    params: &DualParams,
    state: &DualState,
) -> Result<Solution> {
    let start = Instant::now();
    if state.alpha.len() != cs.n() || phi.n() != cs.n() {
        return Err(Error::Parameter("dual state does not match the constraint system".into()));
    }
    let alpha = &state.alpha;
    let theta = (&cs.c + cs.a.tr_mul(alpha)) / (2.0 * params.lambda_theta);
    let delta = alpha / (-2.0 * params.gamma);
    let sos_values = state.barrier.g_diag() * params.epsilon;
    let b_star = match phi {
        FeatureMatrix::Explicit(_) => {
            let mut b = state.barrier.chol.inverse() * params.epsilon;
            let q = b.nrows();
            for i in 0..q {
                for j in 0..i {
                    let v = 0.5 * (b[(i, j)] + b[(j, i)]);
                    b[(i, j)] = v;
                    b[(j, i)] = v;
                }
            }
            Some(b)
        }
        FeatureMatrix::JitteredLowRank { .. } => None,
    };
    Ok(Solution {
        theta,
        b_star,
        alpha: alpha.clone(),
        delta,
        sos_values,
        diagnostics: Diagnostics {
            iterations: state.iterations,
            stage_iterations: vec![state.iterations],
            final_decrement: state.decrement,
            final_objective: state.objective,
            wall_time: start.elapsed(),
        },
    })
}
