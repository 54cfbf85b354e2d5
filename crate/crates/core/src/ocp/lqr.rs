use nalgebra::{DMatrix, DVector};

use super::{Bounds, ControlAffineQuadratic, ControlProblem, ValueFunction};
use crate::{Error, Result};

/// `ẋ = A x + B u`, `L = xᵀQx + uᵀRu`, `M(x) = xᵀ M₀ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    terminal: DMatrix<f64>,
    horizon: f64,
    state_box: Bounds,
    control_box: Bounds,
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = 1.0 + m.amax();
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * scale
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

impl LqrProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        terminal: DMatrix<f64>,
        horizon: f64,
        state_box: Bounds,
        control_box: Bounds,
    ) -> Result<Self> {
        let d = a.nrows();
        let p = b.ncols();
        if d == 0 || p == 0 || !a.is_square() || b.nrows() != d {
            return Err(Error::Parameter("A must be d×d and B d×p with d, p ≥ 1".into()));
        }
        if q.shape() != (d, d) || terminal.shape() != (d, d) || r.shape() != (p, p) {
            return Err(Error::Parameter("Q, M₀ must be d×d and R p×p".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        for (name, m) in [("Q", &q), ("M0", &terminal)] {
            if !is_symmetric(m) || min_eigenvalue(m) < -1e-12 * (1.0 + m.amax()) {
                return Err(Error::Parameter(format!("{name} must be symmetric positive semi-definite")));
            }
        }
        if !is_symmetric(&r) || min_eigenvalue(&r) <= 0.0 {
            return Err(Error::Parameter("R must be symmetric positive definite".into()));
        }
        if state_box.dim() != d || control_box.dim() != p {
            return Err(Error::Parameter("box dimensions do not match (d, p)".into()));
        }
        Ok(Self { a, b, q, r, terminal, horizon, state_box, control_box })
    }

    /// The finite-horizon double integrator used throughout the experiments:
    /// `A = [[0, 1], [0, 0]]`, `B = (0, 1)ᵀ`, `Q = I₂`, `R = 0.1`, `M(x) = ‖x‖²`,
    /// `T = 1`, on `[-1, 1]² × [-10, 10]`.
    pub fn double_integrator() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::identity(2, 2),
            1.0,
            Bounds::cube(2, -1.0, 1.0).expect("valid box"),
            Bounds::cube(1, -10.0, 10.0).expect("valid box"),
        )
        .expect("double integrator data is valid")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn terminal_matrix(&self) -> &DMatrix<f64> {
        &self.terminal
    }

    /// Same problem on a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, ..self.clone() })
    }

    fn r_inverse(&self) -> Result<DMatrix<f64>> {
        self.r.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| Error::Parameter("R is not invertible".into()))
    }

    /// `Ṡ = −Q − AᵀS − SA + S B R⁻¹ Bᵀ S`, with `G = B R⁻¹ Bᵀ` precomputed.
    fn riccati_rhs(&self, g: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
        -&self.q - self.a.transpose() * s - s * &self.a + s * g * s
    }
}

impl ControlProblem for LqrProblem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn state_box(&self) -> &Bounds {
        &self.state_box
    }
    fn control_box(&self) -> &Bounds {
        &self.control_box
    }

    fn dynamics(&self, _t: f64, x: &[f64], u: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        &self.a * x + &self.b * u
    }

    fn running_cost(&self, _t: f64, x: &[f64], u: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        x.dot(&(&self.q * &x)) + u.dot(&(&self.r * &u))
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        x.dot(&(&self.terminal * &x))
    }

    fn terminal_grad(&self, x: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(x);
        (&self.terminal + self.terminal.transpose()) * x
    }

    fn terminal_laplacian(&self, _x: &[f64]) -> f64 {
        2.0 * self.terminal.trace()
    }

    fn control_affine_quadratic(&self, _t: f64, _x: &[f64]) -> Option<ControlAffineQuadratic> {
        Some(ControlAffineQuadratic { input: self.b.clone(), control_weight: self.r.clone() })
    }
}

/// Time-gridded solution `S(t)` of the Riccati differential equation.
///
/// Values between grid points are linearly interpolated.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    step: f64,
    lqr: LqrProblem,
    gain_factor: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.s
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn problem(&self) -> &LqrProblem {
        &self.lqr
    }

    pub fn horizon(&self) -> f64 {
        self.lqr.horizon
    }

    /// `S(t)`, linearly interpolated; `t` is clamped to `[0, T]`.
    pub fn s_at(&self, t: f64) -> DMatrix<f64> {
        let n = self.grid.len() - 1;
        let pos = (t.clamp(0.0, self.horizon()) / self.step).min(n as f64);
        let k = (pos.floor() as usize).min(n - 1);
        let w = pos - k as f64;
        if w == 0.0 {
            return self.s[k].clone();
        }
        &self.s[k] * (1.0 - w) + &self.s[k + 1] * w
    }

    /// `Ṡ(t)` from the Riccati right-hand side at the interpolated `S(t)`.
    pub fn s_dot_at(&self, t: f64) -> DMatrix<f64> {
        self.lqr.riccati_rhs(&self.g, &self.s_at(t))
    }

    /// Feedback gain `K(t) = R⁻¹ Bᵀ S(t)`; the optimal control is `−K(t) x`.
    pub fn gain_at(&self, t: f64) -> DMatrix<f64> {
        &self.gain_factor * self.s_at(t)
    }

    /// The optimal feedback `u*(t, x) = −K(t) x` (not clipped).
    pub fn optimal_control(&self, t: f64, x: &[f64]) -> DVector<f64> {
        -(self.gain_at(t) * DVector::from_column_slice(x))
    }
}

/// `V*(t, x) = xᵀ S(t) x`. Out-of-range `t` is clamped to `[0, T]`; use
/// [`lqr_value`] for a checked evaluation.
impl ValueFunction for RiccatiSolution {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        x.dot(&(self.s_at(t) * &x))
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        x.dot(&(self.s_dot_at(t) * &x))
    }

    fn gradient(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let s = self.s_at(t);
        (&s + s.transpose()) * DVector::from_column_slice(x)
    }
}

/// Integrates the Riccati ODE backward from `S(T) = M₀` with classic RK4 on
/// `n_steps` uniform steps, symmetrizing after every step.
pub fn riccati_backward_solve(lqr: &LqrProblem, n_steps: usize) -> Result<RiccatiSolution> {
    if n_steps < 10 {
        return Err(Error::Parameter(format!("n_steps must be at least 10, got {n_steps}")));
    }
    let r_inv = lqr.r_inverse()?;
    let g = &lqr.b * &r_inv * lqr.b.transpose();
    let horizon = lqr.horizon;
    let h = horizon / n_steps as f64;

    // In reversed time τ = T − t the equation reads dS/dτ = −Ṡ.
    let rhs = |s: &DMatrix<f64>| -lqr.riccati_rhs(&g, s);
    let mut s = lqr.terminal.clone();
    let mut reversed = Vec::with_capacity(n_steps + 1);
    reversed.push(s.clone());
    for k in 0..n_steps {
        let k1 = rhs(&s);
        let k2 = rhs(&(&s + &k1 * (0.5 * h)));
        let k3 = rhs(&(&s + &k2 * (0.5 * h)));
        let k4 = rhs(&(&s + &k3 * h));
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        s = (&s + s.transpose()) * 0.5;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: horizon - (k + 1) as f64 * h });
        }
        reversed.push(s.clone());
    }
    reversed.reverse();

    let mut grid: Vec<f64> = (0..=n_steps).map(|k| k as f64 * h).collect();
    grid[n_steps] = horizon;
    let gain_factor = &r_inv * lqr.b.transpose();
    Ok(RiccatiSolution { grid, s: reversed, step: h, lqr: lqr.clone(), gain_factor, g })
}

/// Checked `V*(t, x) = xᵀ S(t) x`.
pub fn lqr_value(riccati: &RiccatiSolution, t: f64, x: &[f64]) -> Result<f64> {
    if !(0.0..=riccati.horizon()).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", riccati.horizon())));
    }
    if x.len() != riccati.lqr.state_dim() {
        return Err(Error::Domain(format!("state has length {}, expected {}", x.len(), riccati.lqr.state_dim())));
    }
    Ok(riccati.value(t, x))
}

const ARE_TOLERANCE: f64 = 1e-8;
const ARE_MAX_ITERS: usize = 100;
const ARE_SEED_HORIZON: f64 = 20.0;

/// Stabilizing solution `S₀` of `0 = −Q − AᵀS − SA + S B R⁻¹ Bᵀ S`.
///
/// Seeds Newton's method with `S(0)` of the Riccati ODE on a long horizon and
/// iterates until the Frobenius residual is at most `1e-8`.
pub fn algebraic_riccati_solve(lqr: &LqrProblem) -> Result<DMatrix<f64>> {
    let long = lqr.with_horizon(ARE_SEED_HORIZON)?;
    let seed = riccati_backward_solve(&long, 4000)?;
    let r_inv = lqr.r_inverse()?;
    let g = &lqr.b * r_inv * lqr.b.transpose();
    let d = lqr.state_dim();
    let eye = DMatrix::<f64>::identity(d, d);

    let mut s = seed.s[0].clone();
    for _ in 0..ARE_MAX_ITERS {
        let residual = lqr.riccati_rhs(&g, &s);
        if residual.norm() <= ARE_TOLERANCE {
            return Ok(s);
        }
        // Linearization: R(S + X) ≈ R(S) − A_cᵀX − X A_c with A_c = A − G S.
        let ac = &lqr.a - &g * &s;
        let act = ac.transpose();
        let lyap = eye.kronecker(&act) + act.kronecker(&eye);
        let rhs = DVector::from_column_slice(residual.as_slice());
        let step = lyap
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular Lyapunov operator in ARE Newton step".into()))?;
        s += DMatrix::from_column_slice(d, d, step.as_slice());
        s = (&s + s.transpose()) * 0.5;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("ARE Newton iterate is not finite".into()));
        }
    }
    let residual = lqr.riccati_rhs(&g, &s).norm();
    if residual <= ARE_TOLERANCE {
        return Ok(s);
    }
    Err(Error::Convergence { iterations: ARE_MAX_ITERS, decrement: residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_lqr(a: f64, b: f64, q: f64, r: f64, m: f64) -> LqrProblem {
        LqrProblem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
            DMatrix::from_element(1, 1, m),
            1.0,
            Bounds::cube(1, -1.0, 1.0).unwrap(),
            Bounds::cube(1, -1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_cost_gives_zero_solution() {
        let lqr = LqrProblem::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -2.0, 0.1]),
            DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
            DMatrix::zeros(2, 2),
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::zeros(2, 2),
            1.0,
            Bounds::cube(2, -1.0, 1.0).unwrap(),
            Bounds::cube(1, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let sol = riccati_backward_solve(&lqr, 50).unwrap();
        assert!(sol.matrices().iter().all(|s| s.amax() == 0.0));
    }

    #[test]
    fn terminal_condition_is_exact() {
        let lqr = LqrProblem::double_integrator();
        let sol = riccati_backward_solve(&lqr, 1000).unwrap();
        assert_eq!(sol.matrices().last().unwrap(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(*sol.grid().last().unwrap(), 1.0);
        assert_eq!(lqr_value(&sol, 1.0, &[0.6, -0.8]).unwrap(), 0.6 * 0.6 + 0.8 * 0.8);
    }

    #[test]
    fn scalar_ode_matches_tanh() {
        // dS/dτ = 1 − S², S(τ=0) = 0  ⇒  S = tanh(τ).
        let sol = riccati_backward_solve(&scalar_lqr(0.0, 1.0, 1.0, 1.0, 0.0), 1000).unwrap();
        assert!((sol.s_at(0.0)[(0, 0)] - 1f64.tanh()).abs() < 1e-12);
        assert!((sol.s_at(0.5)[(0, 0)] - 0.5f64.tanh()).abs() < 1e-7);
    }

    #[test]
    fn scalar_are() {
        let s = algebraic_riccati_solve(&scalar_lqr(0.0, 1.0, 1.0, 1.0, 0.0)).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let lqr = LqrProblem::double_integrator();
        assert!(matches!(riccati_backward_solve(&lqr, 5), Err(Error::Parameter(_))));
        let sol = riccati_backward_solve(&lqr, 100).unwrap();
        assert!(matches!(lqr_value(&sol, 1.5, &[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(lqr_value(&sol, -0.1, &[0.0, 0.0]), Err(Error::Domain(_))));
        let bad_r = LqrProblem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            1.0,
            Bounds::cube(1, -1.0, 1.0).unwrap(),
            Bounds::cube(1, -1.0, 1.0).unwrap(),
        );
        assert!(matches!(bad_r, Err(Error::Parameter(_))));
    }

    #[test]
    fn value_at_origin_is_zero() {
        let sol = riccati_backward_solve(&LqrProblem::double_integrator(), 100).unwrap();
        assert_eq!(lqr_value(&sol, 0.37, &[0.0, 0.0]).unwrap(), 0.0);
    }
}
