//! Evaluation of value-function approximations: distance to the truth on a
//! regular grid, cost of the greedy policy, the least-squares projection of
//! the truth onto the model, and the LQR sum-of-squares identity.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::features::FeatureBasis;
use crate::ocp::{rollout, Bounds, ControlProblem, LqrProblem, Policy, RiccatiSolution, ValueFunction};
use crate::sampling::uniform_grid;
use crate::{Error, Result};

/// Endpoint-inclusive tensor grid on `[0, T] × box`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub n_t: usize,
    pub n_x: usize,
    points: Vec<(f64, Vec<f64>)>,
}

pub const DEFAULT_GRID: usize = 10;
pub const DEFAULT_ROLLOUT_STEPS: usize = 1000;

/// Tensor product of one uniform axis per box coordinate, first coordinate
/// slowest.
pub fn box_grid(bounds: &Bounds, per_axis: usize) -> Vec<Vec<f64>> {
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for k in 0..bounds.dim() {
        let axis = uniform_grid(per_axis, bounds.lo()[k], bounds.hi()[k]);
        points = points
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    points
}

impl EvalGrid {
    /// `n_t` times in `[0, T]` times `n_x` points per state axis.
    pub fn new(horizon: f64, state_box: &Bounds, n_t: usize, n_x: usize) -> Result<Self> {
        if n_t == 0 || n_x == 0 {
            return Err(Error::Parameter("evaluation grid must have at least one point per axis".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        let states = box_grid(state_box, n_x);
        let points = uniform_grid(n_t, 0.0, horizon)
            .into_iter()
            .flat_map(|t| states.iter().map(move |x| (t, x.clone())))
            .collect();
        Ok(Self { n_t, n_x, points })
    }

    /// The default `10 × 10 × …` grid of a problem.
    pub fn for_problem(problem: &dyn ControlProblem) -> Result<Self> {
        Self::new(problem.horizon(), problem.state_box(), DEFAULT_GRID, DEFAULT_GRID)
    }

    pub fn points(&self) -> &[(f64, Vec<f64>)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `Σ (V − V*)²` over the grid.
pub fn value_error(model: &dyn ValueFunction, truth: &dyn ValueFunction, grid: &EvalGrid) -> f64 {
    grid.points()
        .iter()
        .map(|(t, x)| {
            let e = model.value(*t, x) - truth.value(*t, x);
            e * e
        })
        .sum()
}

/// Golden-section passes and grid size of the generic greedy minimization.
const GREEDY_GRID: usize = 201;
const GOLDEN_ITERS: usize = 40;

/// The control minimizing `L(t, x, u) + ∇V(t, x)ᵀ f(t, x, u)` over the
/// control box.
pub struct GreedyPolicy<'a> {
    problem: &'a dyn ControlProblem,
    value: &'a dyn ValueFunction,
}

pub fn greedy_policy<'a>(problem: &'a dyn ControlProblem, value: &'a dyn ValueFunction) -> GreedyPolicy<'a> {
    GreedyPolicy { problem, value }
}

impl GreedyPolicy<'_> {
    fn objective(&self, t: f64, x: &[f64], grad: &DVector<f64>, u: &[f64]) -> f64 {
        self.problem.running_cost(t, x, u) + grad.dot(&self.problem.dynamics(t, x, u))
    }

    /// Best point of a `201^p` grid, then golden-section search along each
    /// coordinate within one grid cell of it.
    fn search(&self, t: f64, x: &[f64], grad: &DVector<f64>) -> DVector<f64> {
        let cbox = self.problem.control_box();
        let mut best = Vec::new();
        let mut best_value = f64::INFINITY;
        for u in box_grid(cbox, GREEDY_GRID) {
            let v = self.objective(t, x, grad, &u);
            if v < best_value {
                best_value = v;
                best = u;
            }
        }
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        for k in 0..best.len() {
            let cell = (cbox.hi()[k] - cbox.lo()[k]) / (GREEDY_GRID - 1) as f64;
            let mut lo = (best[k] - cell).max(cbox.lo()[k]);
            let mut hi = (best[k] + cell).min(cbox.hi()[k]);
            let mut u = best.clone();
            let mut eval = |v: f64| {
                u[k] = v;
                self.objective(t, x, grad, &u)
            };
            let mut c = hi - inv_phi * (hi - lo);
            let mut d = lo + inv_phi * (hi - lo);
            let (mut fc, mut fd) = (eval(c), eval(d));
            for _ in 0..GOLDEN_ITERS {
                if fc < fd {
                    hi = d;
                    d = c;
                    fd = fc;
                    c = hi - inv_phi * (hi - lo);
                    fc = eval(c);
                } else {
                    lo = c;
                    c = d;
                    fc = fd;
                    d = lo + inv_phi * (hi - lo);
                    fd = eval(d);
                }
            }
            let mid = 0.5 * (lo + hi);
            if eval(mid) <= best_value {
                best[k] = mid;
                best_value = eval(mid);
            }
        }
        DVector::from_vec(best)
    }
}

impl Policy for GreedyPolicy<'_> {
    fn control(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let grad = self.value.gradient(t, x);
        let mut u = match self.problem.control_affine_quadratic(t, x) {
            // L = ℓ + uᵀRu, f = g + Bu: the minimizer is −½ R⁻¹ Bᵀ ∇V.
            Some(s) => match s.control_weight.clone().cholesky() {
                Some(chol) => chol.solve(&(s.input.tr_mul(&grad))) * -0.5,
                None => self.search(t, x, &grad),
            },
            None => self.search(t, x, &grad),
        };
        self.problem.control_box().clamp(u.as_mut_slice());
        u
    }
}

/// Rollout cost from every point of the `per_axis^d` initial grid at `t = 0`.
pub fn policy_costs(
    problem: &dyn ControlProblem,
    policy: &dyn Policy,
    per_axis: usize,
    n_steps: usize,
) -> Result<Vec<f64>> {
    if per_axis == 0 {
        return Err(Error::Parameter("initial grid must have at least one point per axis".into()));
    }
    let starts = box_grid(problem.state_box(), per_axis);
    let results: Vec<Result<f64>> =
        starts.par_iter().map(|x0| rollout(problem, policy, x0, n_steps).map(|tr| tr.total_cost)).collect();
    let mut failed = Vec::new();
    let mut first_time = f64::INFINITY;
    let mut costs = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => costs.push(c),
            Err(Error::Divergence { time }) => {
                failed.push(i);
                first_time = first_time.min(time);
            }
            Err(e) => return Err(e),
        }
    }
    if !failed.is_empty() {
        return Err(Error::RolloutFailures { failed, first_time });
    }
    Ok(costs)
}

/// Mean rollout cost over the initial grid.
pub fn policy_cost(problem: &dyn ControlProblem, policy: &dyn Policy, per_axis: usize, n_steps: usize) -> Result<f64> {
    let costs = policy_costs(problem, policy, per_axis, n_steps)?;
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}

/// Ridge added to the normal equations of [`project_truth`].
pub const PROJECTION_RIDGE: f64 = 1e-10;

/// `argmin_θ Σ (θᵀψ(t, x) + M(x) − V*(t, x))²` over the grid.
pub fn project_truth(
    basis: &FeatureBasis,
    problem: &dyn ControlProblem,
    truth: &dyn ValueFunction,
    grid: &EvalGrid,
) -> Result<DVector<f64>> {
    let m = basis.len();
    if grid.len() < m {
        return Err(Error::Parameter(format!("{} grid points cannot determine {m} coefficients", grid.len())));
    }
    let mut gram = DMatrix::identity(m, m) * PROJECTION_RIDGE;
    let mut rhs = DVector::zeros(m);
    for (t, x) in grid.points() {
        let psi = basis.psi(*t, x);
        let target = truth.value(*t, x) - problem.terminal_cost(x);
        gram.syger(1.0, &psi, &psi, 1.0);
        rhs.axpy(target, &psi, 1.0);
    }
    gram.fill_upper_triangle_with_lower_triangle();
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("projection normal equations are singular".into()))
}

/// `H*(t, x, u) − (u + K(t)x)ᵀ R (u + K(t)x)` for `V* = xᵀS(t)x`, with
/// `Ṡ` taken from the Riccati right-hand side. Vanishes identically.
pub fn lqr_sos_residual(riccati: &RiccatiSolution, t: f64, x: &[f64], u: &[f64]) -> f64 {
    let lqr = riccati.problem();
    let hamiltonian = crate::ocp::hamiltonian(lqr, riccati, t, x, u);
    let v = DVector::from_column_slice(u) + riccati.gain_at(t) * DVector::from_column_slice(x);
    hamiltonian - v.dot(&(lqr.r() * &v))
}

/// The stationary version: `V*(x) = xᵀS₀x` with `S₀` solving the algebraic
/// Riccati equation, so no time derivative.
pub fn lqr_sos_residual_stationary(lqr: &LqrProblem, s0: &DMatrix<f64>, x: &[f64], u: &[f64]) -> Result<f64> {
    let (d, p) = (lqr.state_dim(), lqr.control_dim());
    if s0.shape() != (d, d) || x.len() != d || u.len() != p {
        return Err(Error::Parameter("dimension mismatch".into()));
    }
    let xv = DVector::from_column_slice(x);
    let uv = DVector::from_column_slice(u);
    let grad = (s0 + s0.transpose()) * &xv;
    let h = lqr.running_cost(0.0, x, u) + grad.dot(&lqr.dynamics(0.0, x, u));
    let gain = lqr
        .r()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Parameter("R is not positive definite".into()))?
        .solve(&(lqr.b().transpose() * s0));
    let v = uv + gain * xv;
    Ok(h - v.dot(&(lqr.r() * &v)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `None` without ground truth.
    pub value_error: Option<f64>,
    pub policy_cost: f64,
    pub per_point_costs: Vec<f64>,
    pub grid_n_t: usize,
    pub grid_n_x: usize,
    pub rollout_steps: usize,
}

/// Value error against `truth` (when given) on the default grid and the mean
/// cost of the greedy policy of `model` over the default initial grid.
pub fn evaluate(
    problem: &dyn ControlProblem,
    model: &dyn ValueFunction,
    truth: Option<&dyn ValueFunction>,
) -> Result<EvalReport> {
    let grid = EvalGrid::for_problem(problem)?;
    let value_error = truth.map(|truth| value_error(model, truth, &grid));
    let policy = greedy_policy(problem, model);
    let per_point_costs = policy_costs(problem, &policy, DEFAULT_GRID, DEFAULT_ROLLOUT_STEPS)?;
    let policy_cost = per_point_costs.iter().sum::<f64>() / per_point_costs.len() as f64;
    Ok(EvalReport {
        value_error,
        policy_cost,
        per_point_costs,
        grid_n_t: grid.n_t,
        grid_n_x: grid.n_x,
        rollout_steps: DEFAULT_ROLLOUT_STEPS,
    })
}
