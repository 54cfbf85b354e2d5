use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{Diagnostics, DualParams, Solution};
use crate::assembly::ConstraintSystem;
use crate::{Error, Result};

const MAX_ITERS: usize = 10_000;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// `−cᵀθ + λ_θ‖θ‖² + γ Σ max(0, −r_i)² − C`, `r = b + Aθ`.
fn penalized(cs: &ConstraintSystem, lambda_theta: f64, gamma: f64, theta: &DVector<f64>) -> (f64, DVector<f64>) {
    let r = cs.residuals(theta);
    let violation: f64 = r.iter().map(|&v| if v < 0.0 { v * v } else { 0.0 }).sum();
    let f = -cs.c.dot(theta) + lambda_theta * theta.norm_squared() + gamma * violation - cs.offset;
    (f, r)
}

fn active(r: &DVector<f64>) -> Vec<bool> {
    r.iter().map(|&v| v < 0.0).collect()
}

fn factorize(mut h: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let m = h.nrows();
    let scale = (h.trace() / m as f64).max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..12 {
        if let Some(chol) = Cholesky::new(h.clone()) {
            return Ok(chol);
        }
        let next = if ridge == 0.0 { 1e-14 * scale } else { ridge * 10.0 };
        for k in 0..m {
            h[(k, k)] += next - ridge;
        }
        ridge = next;
    }
    Err(Error::Numerical("LP Newton matrix could not be factorized".into()))
}

/// Maximizes `cᵀθ − λ_θ‖θ‖² − γ Σ max(0, −(b_i + a_iᵀθ))² + C`, the penalized
/// LP with the slack `δ = min(0, b + Aθ)` eliminated, by Newton's method with
/// Armijo backtracking from `θ = 0`.
///
/// Uses `lambda_theta` and `gamma` of `params`. The returned multipliers are
/// `α = −2γδ`, so `θ = (c + Aᵀα) / (2λ_θ)` as for the SoS programs.
pub fn solve_lp(cs: &ConstraintSystem, params: &DualParams) -> Result<Solution> {
    let start = Instant::now();
    let (lambda_theta, gamma) = (params.lambda_theta, params.gamma);
    if !(lambda_theta > 0.0) || !(gamma > 0.0) || !lambda_theta.is_finite() || !gamma.is_finite() {
        return Err(Error::Parameter("λ_θ and γ must be positive and finite".into()));
    }
    if cs.n() == 0 {
        return Err(Error::Parameter("empty constraint set".into()));
    }
    let m = cs.m();
    let mut theta = DVector::zeros(m);
    let (mut f, mut r) = penalized(cs, lambda_theta, gamma, &theta);
    let mut decrement = f64::INFINITY;

    let mut iterations = 0;
    loop {
        if iterations == MAX_ITERS {
            return Err(Error::Convergence { iterations, decrement });
        }
        let set = active(&r);
        let hinge = r.map(|v| v.min(0.0));
        let grad = -&cs.c + &theta * (2.0 * lambda_theta) + cs.a.tr_mul(&hinge) * (2.0 * gamma);
        let mut h = DMatrix::identity(m, m) * (2.0 * lambda_theta);
        let rows: Vec<usize> = (0..cs.n()).filter(|&i| set[i]).collect();
        if !rows.is_empty() {
            let a_act = cs.a.select_rows(&rows);
            h += a_act.tr_mul(&a_act) * (2.0 * gamma);
        }
        let direction = -factorize(h)?.solve(&grad);
        let slope = grad.dot(&direction);
        decrement = (-slope).max(0.0).sqrt();
        if decrement * decrement <= 1e-24 * (1.0 + f.abs()) {
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = &theta + &direction * step;
            let (fc, rc) = penalized(cs, lambda_theta, gamma, &candidate);
            if fc <= f + ARMIJO * step * slope {
                accepted = Some((candidate, fc, rc));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((candidate, fc, rc)) = accepted else {
            // No decrease is possible beyond rounding of f: the iterate is optimal
            // to working precision.
            if decrement * decrement <= 1e-12 * (1.0 + f.abs()) {
                break;
            }
            return Err(Error::Numerical(format!("LP line search failed (decrement {decrement:e})")));
        };
        let same_piece = step == 1.0 && active(&rc) == set;
        theta = candidate;
        f = fc;
        r = rc;
        // A full step that stays on one quadratic piece lands on its minimizer.
        if same_piece {
            decrement = 0.0;
            break;
        }
    }

    let delta = r.map(|v| v.min(0.0));
    let alpha = &delta * (-2.0 * gamma);
    Ok(Solution {
        theta,
        b_star: None,
        alpha,
        delta,
        sos_values: DVector::zeros(cs.n()),
        diagnostics: Diagnostics {
            iterations,
            stage_iterations: vec![iterations],
            final_decrement: decrement,
            final_objective: -f,
            wall_time: start.elapsed(),
        },
    })
}
