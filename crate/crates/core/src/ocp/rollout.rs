use nalgebra::{DMatrix, DVector};

use super::ControlProblem;
use crate::{Error, Result};

/// State feedback `(t, x) ↦ u`.
pub trait Policy: Sync {
    fn control(&self, t: f64, x: &[f64]) -> DVector<f64>;
}

impl<F> Policy for F
where
    F: Fn(f64, &[f64]) -> DVector<f64> + Sync,
{
    fn control(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self(t, x)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `(N + 1) × d`, one state per row.
    pub states: DMatrix<f64>,
    /// `N × p`, the (clipped) control applied at the start of each step.
    pub controls: DMatrix<f64>,
    pub running_cost_integral: f64,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> Vec<f64> {
        self.states.row(self.states.nrows() - 1).iter().copied().collect()
    }
}

/// Closed-loop RK4 simulation of `ẋ = f(t, x, π(t, x))` from `(0, x0)` to `T`.
///
/// The running cost is integrated as an extra state through the same RK4
/// stages. Controls are clipped to the control box at every stage; states are
/// recorded as-is even when they leave the state box.
pub fn rollout(problem: &dyn ControlProblem, policy: &dyn Policy, x0: &[f64], n_steps: usize) -> Result<Trajectory> {
    if n_steps < 10 {
        return Err(Error::Parameter(format!("n_steps must be at least 10, got {n_steps}")));
    }
    let d = problem.state_dim();
    let p = problem.control_dim();
    if x0.len() != d {
        return Err(Error::Domain(format!("initial state has length {}, expected {d}", x0.len())));
    }
    let horizon = problem.horizon();
    let h = horizon / n_steps as f64;

    let control_at = |t: f64, x: &[f64]| {
        let mut u = policy.control(t, x);
        problem.control_box().clamp(u.as_mut_slice());
        u
    };
    // (ẋ, running cost rate) at one stage.
    let stage = |t: f64, x: &DVector<f64>| {
        let u = control_at(t, x.as_slice());
        (problem.dynamics(t, x.as_slice(), u.as_slice()), problem.running_cost(t, x.as_slice(), u.as_slice()))
    };

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = DMatrix::zeros(n_steps + 1, d);
    let mut controls = DMatrix::zeros(n_steps, p);
    let mut x = DVector::from_column_slice(x0);
    let mut cost = 0.0;
    times.push(0.0);
    states.row_mut(0).copy_from(&x.transpose());

    for k in 0..n_steps {
        let t = k as f64 * h;
        let u0 = control_at(t, x.as_slice());
        controls.row_mut(k).copy_from(&u0.transpose());

        let (k1, c1) = stage(t, &x);
        let (k2, c2) = stage(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let (k3, c3) = stage(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let (k4, c4) = stage(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        cost += (c1 + 2.0 * c2 + 2.0 * c3 + c4) * (h / 6.0);

        let t_next = if k + 1 == n_steps { horizon } else { (k + 1) as f64 * h };
        if x.iter().any(|v| !v.is_finite()) || !cost.is_finite() {
            return Err(Error::Divergence { time: t_next });
        }
        times.push(t_next);
        states.row_mut(k + 1).copy_from(&x.transpose());
    }

    let total_cost = cost + problem.terminal_cost(x.as_slice());
    Ok(Trajectory { times, states, controls, running_cost_integral: cost, total_cost })
}
