//! The log-barrier Lagrange dual
//!
//! ```text
//! F(α) = αᵀb + ‖c + Aᵀα‖² / (4λ_θ) − ε log det U(α) + ‖α‖² / (4γ) + ε q log(ε/e) + C
//! U(α) = λ I_q + Φᵀ Diag(α) Φ
//! ```
//!
//! and its derivatives. Everything about `Φ` that the dual needs is the
//! `n × n` matrix `G = Φ U⁻¹ Φᵀ`, which is kept as `Diag(g₀) + Y Yᵀ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{FeatureMatrix, NewtonSystem};
use crate::assembly::ConstraintSystem;
use crate::{Error, Result};

/// Hyperparameters of one dual problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualParams {
    /// Trace regularizer λ.
    pub lambda: f64,
    pub lambda_theta: f64,
    /// Slack penalty γ.
    pub gamma: f64,
    /// Barrier weight ε.
    pub epsilon: f64,
}

impl DualParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda_theta", self.lambda_theta),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// `U(α)` factorized, with `G = Φ U⁻¹ Φᵀ` in factored form.
#[derive(Clone)]
pub(crate) struct Barrier {
    pub logdet_u: f64,
    /// Diagonal part of `G`; absent for explicit features.
    pub g_diag_part: Option<DVector<f64>>,
    /// Low-rank part of `G`, `n × r`.
    pub y: DMatrix<f64>,
    /// Cholesky factor of `U` (explicit features) or of the reduced `Ũ`.
    pub chol: Cholesky<f64, Dyn>,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, &v) in out.row_iter_mut().zip(s.iter()) {
        row *= v;
    }
    out
}

/// `Y = (L⁻¹ Pᵀ)ᵀ`, so that `Y Yᵀ = P (L Lᵀ)⁻¹ Pᵀ`.
fn whiten(chol: &Cholesky<f64, Dyn>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut pt = p.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut pt);
    pt.transpose()
}

impl Barrier {
    /// `None` when `U(α)` is not positive definite.
    pub fn evaluate(phi: &FeatureMatrix, lambda: f64, alpha: &DVector<f64>) -> Option<Self> {
        if alpha.iter().any(|v| !v.is_finite()) {
            return None;
        }
        match phi {
            FeatureMatrix::Explicit(phi) => {
                let q = phi.ncols();
                let mut u = phi.transpose() * scale_rows(phi, alpha);
                for k in 0..q {
                    u[(k, k)] += lambda;
                }
                symmetrize(&mut u);
                let chol = Cholesky::new(u)?;
                let logdet_u = logdet(&chol);
                let y = whiten(&chol, phi);
                Some(Self { logdet_u, g_diag_part: None, y, chol })
            }
            // ΦΦᵀ = ZZᵀ + jI. With s_i = λ / (λ + jα_i):
            //   log det U = Σ log(λ + jα_i) − r log λ + log det Ũ,
            //   Ũ = λI_r + Zᵀ Diag(α ∘ s) Z,
            //   G = Diag(j / (λ + jα)) + (Diag(s) Z) Ũ⁻¹ (Diag(s) Z)ᵀ,
            // and U ≻ 0 iff every λ + jα_i > 0 and Ũ ≻ 0.
            FeatureMatrix::JitteredLowRank { factor, jitter } => {
                let denom = alpha.map(|a| lambda + jitter * a);
                if denom.iter().any(|&v| !(v > 0.0)) {
                    return None;
                }
                let s = denom.map(|v| lambda / v);
                let r = factor.ncols();
                let weights = alpha.component_mul(&s);
                let mut u = factor.transpose() * scale_rows(factor, &weights);
                for k in 0..r {
                    u[(k, k)] += lambda;
                }
                symmetrize(&mut u);
                let chol = Cholesky::new(u)?;
                let logdet_u = denom.iter().map(|v| v.ln()).sum::<f64>() - r as f64 * lambda.ln() + logdet(&chol);
                let y = whiten(&chol, &scale_rows(factor, &s));
                let g0 = denom.map(|v| jitter / v);
                Some(Self { logdet_u, g_diag_part: Some(g0), y, chol })
            }
        }
    }

    /// `G_ii = Φ_iᵀ U⁻¹ Φ_i`.
    pub fn g_diag(&self) -> DVector<f64> {
        let mut d = DVector::from_iterator(self.y.nrows(), self.y.row_iter().map(|r| r.norm_squared()));
        if let Some(g0) = &self.g_diag_part {
            d += g0;
        }
        d
    }

    pub fn g_dense(&self) -> DMatrix<f64> {
        let mut g = &self.y * self.y.transpose();
        if let Some(g0) = &self.g_diag_part {
            for (i, v) in g0.iter().enumerate() {
                g[(i, i)] += v;
            }
        }
        g
    }
}

/// `(objective, barrier)` at `α`, or `None` outside the barrier domain.
pub(crate) fn objective_with_barrier(
    cs: &ConstraintSystem,
    phi: &FeatureMatrix,
    params: &DualParams,
    alpha: &DVector<f64>,
) -> Option<(f64, Barrier)> {
    let barrier = Barrier::evaluate(phi, params.lambda, alpha)?;
    let w = &cs.c + cs.a.tr_mul(alpha);
    let eps = params.epsilon;
    let q = phi.q() as f64;
    let f = alpha.dot(&cs.b) + w.norm_squared() / (4.0 * params.lambda_theta) - eps * barrier.logdet_u
        + alpha.norm_squared() / (4.0 * params.gamma)
        + eps * q * (eps.ln() - 1.0)
        + cs.offset;
    Some((f, barrier))
}

pub(crate) fn gradient_with_barrier(
    cs: &ConstraintSystem,
    params: &DualParams,
    alpha: &DVector<f64>,
    barrier: &Barrier,
) -> DVector<f64> {
    let w = &cs.c + cs.a.tr_mul(alpha);
    let mut g = &cs.b + &cs.a * w / (2.0 * params.lambda_theta) + alpha / (2.0 * params.gamma);
    g.axpy(-params.epsilon, &barrier.g_diag(), 1.0);
    g
}

fn check_shapes(cs: &ConstraintSystem, phi: &FeatureMatrix, alpha: &DVector<f64>) -> Result<()> {
    if phi.n() != cs.n() || alpha.len() != cs.n() {
        return Err(Error::Parameter(format!(
            "dimension mismatch: {} constraints, {} feature rows, α of length {}",
            cs.n(),
            phi.n(),
            alpha.len()
        )));
    }
    Ok(())
}

/// `F(α)`; `+∞` when `U(α)` is not positive definite.
pub fn dual_objective(cs: &ConstraintSystem, phi: &FeatureMatrix, params: &DualParams, alpha: &DVector<f64>) -> f64 {
    if check_shapes(cs, phi, alpha).is_err() {
        return f64::INFINITY;
    }
    objective_with_barrier(cs, phi, params, alpha).map_or(f64::INFINITY, |(f, _)| f)
}

fn barrier_or_domain_error(phi: &FeatureMatrix, params: &DualParams, alpha: &DVector<f64>) -> Result<Barrier> {
    Barrier::evaluate(phi, params.lambda, alpha).ok_or_else(|| Error::Domain("U(α) is not positive definite".into()))
}

/// `∂F/∂α_i = b_i + a_iᵀ(c + Aᵀα)/(2λ_θ) + α_i/(2γ) − ε Φ_iᵀU⁻¹Φ_i`.
pub fn dual_gradient(
    cs: &ConstraintSystem,
    phi: &FeatureMatrix,
    params: &DualParams,
    alpha: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_shapes(cs, phi, alpha)?;
    let barrier = barrier_or_domain_error(phi, params, alpha)?;
    Ok(gradient_with_barrier(cs, params, alpha, &barrier))
}

pub(crate) fn dense_hessian(cs: &ConstraintSystem, params: &DualParams, barrier: &Barrier) -> DMatrix<f64> {
    let mut h = &cs.a * cs.a.transpose() / (2.0 * params.lambda_theta);
    let g = barrier.g_dense();
    h += g.component_mul(&g) * params.epsilon;
    let slack = 1.0 / (2.0 * params.gamma);
    for i in 0..h.nrows() {
        h[(i, i)] += slack;
    }
    symmetrize(&mut h);
    h
}

/// `F''(α) = AAᵀ/(2λ_θ) + ε (ΦU⁻¹Φᵀ) ∘ (ΦU⁻¹Φᵀ) + I/(2γ)`, dense.
pub fn dual_hessian(
    cs: &ConstraintSystem,
    phi: &FeatureMatrix,
    params: &DualParams,
    alpha: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_shapes(cs, phi, alpha)?;
    let barrier = barrier_or_domain_error(phi, params, alpha)?;
    Ok(dense_hessian(cs, params, &barrier))
}

/// The Newton matrix `F″(α)`.
pub(crate) enum NewtonMatrix {
    Dense(DMatrix<f64>),
    /// `Diag(δ) + V Vᵀ`.
    LowRank {
        delta: DVector<f64>,
        v: DMatrix<f64>,
    },
}

enum Factor {
    /// Cholesky factor of `S (H + μI) S` with the equilibration `S = Diag(H)^{-1/2}`.
    Dense { chol: Cholesky<f64, Dyn>, scale: DVector<f64> },
    /// Woodbury form with `W = Diag(δ + μ)^{-1/2} V` and core `I + WᵀW`.
    LowRank { inv_root: DVector<f64>, w: DMatrix<f64>, core: Cholesky<f64, Dyn> },
}

/// Below this size the dense factorization is always used.
const DENSE_UP_TO: usize = 1500;
const REFINEMENT_STEPS: usize = 2;
/// Relative residual a Newton solve must reach, else a ridge is added.
const SOLVE_TOLERANCE: f64 = 1e-8;
const MAX_RIDGE_ATTEMPTS: usize = 12;

impl NewtonMatrix {
    pub fn build(cs: &ConstraintSystem, params: &DualParams, barrier: &Barrier, system: NewtonSystem) -> Self {
        let use_low_rank = match system {
            NewtonSystem::Dense => false,
            NewtonSystem::LowRank => true,
            NewtonSystem::Auto => {
                let n = cs.n() as f64;
                let r = barrier.y.ncols() as f64;
                let k = cs.m() as f64 + r * (r + 1.0) / 2.0;
                let low_rank_cost = 2.0 * n * k * k + k * k * k / 3.0;
                let dense_cost = n * n * n / 3.0 + 2.0 * n * n * (r + cs.m() as f64);
                cs.n() > DENSE_UP_TO && low_rank_cost < dense_cost
            }
        };
        if use_low_rank {
            Self::low_rank(cs, params, barrier)
        } else {
            NewtonMatrix::Dense(dense_hessian(cs, params, barrier))
        }
    }

    fn low_rank(cs: &ConstraintSystem, params: &DualParams, barrier: &Barrier) -> Self {
        let n = cs.n();
        let m = cs.m();
        let y = &barrier.y;
        let r = y.ncols();
        let eps = params.epsilon;

        // G∘G = Diag(g₀² + 2 g₀ ∘ ‖y_i‖²) + Y₂Y₂ᵀ, where row i of Y₂ holds
        // y_ia² and √2 y_ia y_ib (a < b).
        let mut delta = DVector::from_element(n, 1.0 / (2.0 * params.gamma));
        if let Some(g0) = &barrier.g_diag_part {
            for (i, row) in y.row_iter().enumerate() {
                delta[i] += eps * (g0[i] * g0[i] + 2.0 * g0[i] * row.norm_squared());
            }
        }

        let width = m + r * (r + 1) / 2;
        let mut v = DMatrix::zeros(n, width);
        let a_scale = (2.0 * params.lambda_theta).sqrt().recip();
        v.columns_mut(0, m).copy_from(&(&cs.a * a_scale));
        let (root_eps, root2) = (eps.sqrt(), std::f64::consts::SQRT_2);
        let mut col = m;
        for a in 0..r {
            for i in 0..n {
                v[(i, col)] = root_eps * y[(i, a)] * y[(i, a)];
            }
            col += 1;
            for b in a + 1..r {
                for i in 0..n {
                    v[(i, col)] = root_eps * root2 * y[(i, a)] * y[(i, b)];
                }
                col += 1;
            }
        }
        NewtonMatrix::LowRank { delta, v }
    }

    fn diagonal(&self) -> DVector<f64> {
        match self {
            NewtonMatrix::Dense(h) => h.diagonal(),
            NewtonMatrix::LowRank { delta, v } => DVector::from_iterator(
                delta.len(),
                v.row_iter().zip(delta.iter()).map(|(row, d)| d + row.norm_squared()),
            ),
        }
    }

    /// `H x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            NewtonMatrix::Dense(h) => h * x,
            NewtonMatrix::LowRank { delta, v } => delta.component_mul(x) + v * v.tr_mul(x),
        }
    }

    /// `xᵀ H x`, accumulated from nonnegative pieces when possible.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        match self {
            NewtonMatrix::Dense(h) => x.dot(&(h * x)),
            NewtonMatrix::LowRank { delta, v } => {
                x.iter().zip(delta.iter()).map(|(xi, di)| di * xi * xi).sum::<f64>() + v.tr_mul(x).norm_squared()
            }
        }
    }

    fn factor(&self, ridge: f64) -> Option<Factor> {
        match self {
            NewtonMatrix::Dense(h) => {
                let n = h.nrows();
                let scale = h.diagonal().map(|d| (d + ridge).sqrt().recip());
                let mut scaled = h.clone();
                for j in 0..n {
                    for i in 0..n {
                        scaled[(i, j)] *= scale[i] * scale[j];
                    }
                    scaled[(j, j)] += ridge * scale[j] * scale[j];
                }
                Cholesky::new(scaled).map(|chol| Factor::Dense { chol, scale })
            }
            NewtonMatrix::LowRank { delta, v } => {
                let inv_root = delta.map(|d| (d + ridge).sqrt().recip());
                let w = scale_rows(v, &inv_root);
                let mut core = w.transpose() * &w;
                for k in 0..core.nrows() {
                    core[(k, k)] += 1.0;
                }
                symmetrize(&mut core);
                Cholesky::new(core).map(|core| Factor::LowRank { inv_root, w, core })
            }
        }
    }

    fn apply_inverse(factor: &Factor, rhs: &DVector<f64>) -> DVector<f64> {
        match factor {
            Factor::Dense { chol, scale } => chol.solve(&rhs.component_mul(scale)).component_mul(scale),
            Factor::LowRank { inv_root, w, core } => {
                let h = rhs.component_mul(inv_root);
                let z = core.solve(&w.tr_mul(&h));
                (h - w * z).component_mul(inv_root)
            }
        }
    }

    /// Solves `(H + μI) x = rhs` with iterative refinement, starting from
    /// `μ = 0` and raising the ridge `μ` until the factorization succeeds
    /// and the relative residual is at most `1e-8`. Returns `(x, μ)`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let rhs_norm = rhs.norm();
        if rhs_norm == 0.0 {
            return Ok((DVector::zeros(rhs.len()), 0.0));
        }
        let diag = self.diagonal();
        let base = 1e-12 * diag.iter().sum::<f64>() / diag.len() as f64;
        let mut ridge = 0.0;
        for attempt in 0..MAX_RIDGE_ATTEMPTS {
            if let Some(factor) = self.factor(ridge) {
                let mut x = Self::apply_inverse(&factor, rhs);
                let mut residual = rhs - self.apply(&x) - &x * ridge;
                for _ in 0..REFINEMENT_STEPS {
                    x += Self::apply_inverse(&factor, &residual);
                    residual = rhs - self.apply(&x) - &x * ridge;
                }
                if x.iter().all(|v| v.is_finite()) && residual.norm() <= SOLVE_TOLERANCE * rhs_norm {
                    return Ok((x, ridge));
                }
            }
            ridge = base * 100f64.powi(attempt as i32);
        }
        Err(Error::Numerical("Newton system could not be solved to working accuracy".into()))
    }
}
