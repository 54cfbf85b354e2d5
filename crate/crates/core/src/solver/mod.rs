//! Subsampled subsolution programs.
//!
//! The SoS programs (kernel and guided) share one path: a feature matrix `Φ`
//! with rows `Φ_i`, the log-barrier dual in `α ∈ ℝⁿ` ([`dual_objective`]),
//! damped Newton ([`damped_newton`]) and a homotopy on `(λ_θ, ε)`
//! ([`solve_sos`]). The LP baseline is [`solve_lp`].

mod dual;
mod lp;
mod newton;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};

use crate::assembly::ConstraintSystem;
use crate::kernels::{cholesky_jitter, gram, KernelSpec, BASE_JITTER};
use crate::sampling::{Sample, SampleSet};
use crate::{Error, Result};

pub use dual::{dual_gradient, dual_hessian, dual_objective, DualParams};
pub use lp::solve_lp;
pub use newton::{damped_newton, recover_primal, DualState, NewtonRecord};

/// How the `n × n` Newton system is factorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NewtonSystem {
    /// Picks whichever of the two is cheaper for the problem shape.
    #[default]
    Auto,
    /// Forms the Hessian and factorizes it: `O(n³)`.
    Dense,
    /// Writes the Hessian as diagonal plus rank `m + r(r+1)/2`, where `r` is
    /// the rank of the low-rank part of `Φ U⁻¹ Φᵀ`, and uses Woodbury.
    LowRank,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop when the decrement `λ(α)` drops to this value.
    pub tol: f64,
    pub max_iters: usize,
    pub system: NewtonSystem,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 500, system: NewtonSystem::Auto }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Target hyperparameters; the last homotopy stage.
    pub params: DualParams,
    pub newton: NewtonOptions,
    /// `(λ_θ, ε)` per stage, strictly decreasing, ending at the targets.
    pub homotopy: Vec<(f64, f64)>,
}

/// Number of homotopy stages by default.
pub const DEFAULT_STAGES: usize = 4;

impl SolverConfig {
    /// Targets with the default homotopy: `(λ_θ, ε)` scaled by
    /// `1000, 100, 10, 1`.
    pub fn new(lambda: f64, lambda_theta: f64, gamma: f64, epsilon: f64) -> Result<Self> {
        let params = DualParams { lambda, lambda_theta, gamma, epsilon };
        params.validate()?;
        let homotopy = (0..DEFAULT_STAGES)
            .rev()
            .map(|k| {
                let s = 10f64.powi(k as i32);
                (lambda_theta * s, epsilon * s)
            })
            .collect();
        Ok(Self { params, newton: NewtonOptions::default(), homotopy })
    }

    /// Only the target stage.
    pub fn without_homotopy(mut self) -> Self {
        self.homotopy = vec![(self.params.lambda_theta, self.params.epsilon)];
        self
    }

    pub fn with_homotopy(mut self, stages: Vec<(f64, f64)>) -> Result<Self> {
        self.homotopy = stages;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.newton.tol > 0.0) || self.newton.max_iters == 0 {
            return Err(Error::Parameter("Newton tolerance and iteration cap must be positive".into()));
        }
        let Some(&last) = self.homotopy.last() else {
            return Err(Error::Parameter("homotopy needs at least one stage".into()));
        };
        if last != (self.params.lambda_theta, self.params.epsilon) {
            return Err(Error::Parameter("last homotopy stage must equal the target (λ_θ, ε)".into()));
        }
        for w in self.homotopy.windows(2) {
            if !(w[1].0 < w[0].0 && w[1].1 < w[0].1) {
                return Err(Error::Parameter("homotopy stages must strictly decrease in λ_θ and ε".into()));
            }
        }
        for &(lt, eps) in &self.homotopy {
            DualParams { lambda_theta: lt, epsilon: eps, ..self.params }.validate()?;
        }
        Ok(())
    }

    pub fn stage_params(&self, stage: usize) -> DualParams {
        let (lambda_theta, epsilon) = self.homotopy[stage];
        DualParams { lambda_theta, epsilon, ..self.params }
    }
}

/// The sample embeddings `Φ_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMatrix {
    /// `n × q`, row `i` is `Φ_iᵀ`.
    Explicit(DMatrix<f64>),
    /// Kernel features known only through `ΦΦᵀ = Z Zᵀ + jitter · I`, with
    /// `Z` of size `n × r`. Here `q = n`.
    JitteredLowRank { factor: DMatrix<f64>, jitter: f64 },
}

impl FeatureMatrix {
    pub fn n(&self) -> usize {
        match self {
            FeatureMatrix::Explicit(phi) => phi.nrows(),
            FeatureMatrix::JitteredLowRank { factor, .. } => factor.nrows(),
        }
    }

    /// Feature dimension.
    pub fn q(&self) -> usize {
        match self {
            FeatureMatrix::Explicit(phi) => phi.ncols(),
            FeatureMatrix::JitteredLowRank { factor, .. } => factor.nrows(),
        }
    }

    /// `Φ Φᵀ`, dense.
    pub fn inner_products(&self) -> DMatrix<f64> {
        match self {
            FeatureMatrix::Explicit(phi) => phi * phi.transpose(),
            FeatureMatrix::JitteredLowRank { factor, jitter } => {
                let mut k = factor * factor.transpose();
                for i in 0..k.nrows() {
                    k[(i, i)] += jitter;
                }
                k
            }
        }
    }
}

/// Kernel features of a sample set: the structured factor when the kernel
/// has one, else `Φ = Rᵀ` from the jittered Cholesky factor of the Gram matrix.
pub fn kernel_features(spec: &KernelSpec, samples: &SampleSet) -> Result<FeatureMatrix> {
    if samples.is_empty() {
        return Err(Error::Parameter("no samples".into()));
    }
    if let Some(factor) = spec.explicit_factor(samples.samples()) {
        return Ok(FeatureMatrix::JitteredLowRank { factor, jitter: BASE_JITTER });
    }
    dense_kernel_features(spec, samples)
}

/// `Φ = Rᵀ` with `K + jitter · I = RᵀR`.
pub fn dense_kernel_features(spec: &KernelSpec, samples: &SampleSet) -> Result<FeatureMatrix> {
    let k = gram(spec, samples.samples())?;
    Ok(FeatureMatrix::Explicit(cholesky_jitter(&k)?.feature_matrix()))
}

/// `(u / u_scale, x, (sin(ωπ/2 · (t/T − 1)) / ω · x)_{ω = 1..q_t−1})`, of
/// dimension `p + q_t · d`.
pub fn guided_embedding(sample: &Sample, q_t: usize, u_scale: f64, horizon: f64) -> Result<DVector<f64>> {
    if q_t == 0 {
        return Err(Error::Parameter("q_t must be at least 1".into()));
    }
    if !(u_scale > 0.0) || !(horizon > 0.0) {
        return Err(Error::Parameter("u_scale and horizon must be positive".into()));
    }
    let (d, p) = (sample.x.len(), sample.u.len());
    let mut out = DVector::zeros(p + q_t * d);
    for (k, u) in sample.u.iter().enumerate() {
        out[k] = u / u_scale;
    }
    for (l, x) in sample.x.iter().enumerate() {
        out[p + l] = *x;
    }
    for omega in 1..q_t {
        let w = omega as f64;
        let s = (w * std::f64::consts::FRAC_PI_2 * (sample.t / horizon - 1.0)).sin() / w;
        for (l, x) in sample.x.iter().enumerate() {
            out[p + omega * d + l] = s * x;
        }
    }
    Ok(out)
}

pub fn guided_features(samples: &SampleSet, q_t: usize, u_scale: f64, horizon: f64) -> Result<FeatureMatrix> {
    if samples.is_empty() {
        return Err(Error::Parameter("no samples".into()));
    }
    let rows = samples.iter().map(|s| guided_embedding(s, q_t, u_scale, horizon)).collect::<Result<Vec<_>>>()?;
    let q = rows[0].len();
    if rows.iter().any(|r| r.len() != q) {
        return Err(Error::Parameter("samples have inconsistent dimensions".into()));
    }
    Ok(FeatureMatrix::Explicit(DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Newton iterations summed over stages.
    pub iterations: usize,
    pub stage_iterations: Vec<usize>,
    pub final_decrement: f64,
    /// Final dual objective; for the LP, the penalized primal objective.
    pub final_objective: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub theta: DVector<f64>,
    /// `ε U(α*)⁻¹`; only for explicit SoS features.
    pub b_star: Option<DMatrix<f64>>,
    pub alpha: DVector<f64>,
    /// Slack `δ*`; the constraints read `b + Aθ = Φ_iᵀB*Φ_i + δ`.
    pub delta: DVector<f64>,
    /// `Φ_iᵀ B* Φ_i` per sample; zero for the LP.
    pub sos_values: DVector<f64>,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// `b_i + a_iᵀθ − Φ_iᵀB*Φ_i − δ_i`.
    pub fn constraint_residuals(&self, cs: &ConstraintSystem) -> DVector<f64> {
        cs.residuals(&self.theta) - &self.sos_values - &self.delta
    }
}

/// Midpoint stages inserted at most this many times per solve.
pub const MAX_REFINEMENTS: usize = 8;

/// Damped Newton through the homotopy stages, warm-starting `α` from one
/// stage to the next, starting from `α = 1/n` (unit total mass).
///
/// A stage that hits the iteration cap is retried after an extra stage at the
/// geometric midpoint between it and the last converged stage (or ten times
/// coarser when none has converged). The iterations of a configured stage
/// include its inserted stages and failed attempts.
pub fn solve_sos(cs: &ConstraintSystem, phi: &FeatureMatrix, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if cs.n() == 0 {
        return Err(Error::Parameter("empty constraint set".into()));
    }
    if phi.n() != cs.n() {
        return Err(Error::Parameter(format!("{} feature rows for {} constraints", phi.n(), cs.n())));
    }
    let start = std::time::Instant::now();
    let mut alpha = DVector::from_element(cs.n(), 1.0 / cs.n() as f64);
    let mut stage_iterations = vec![0; cfg.homotopy.len()];
    let mut refinements = 0;
    let mut last_good: Option<(f64, f64)> = None;
    let mut last = None;
    for (stage, &target) in cfg.homotopy.iter().enumerate() {
        let mut pending = vec![target];
        while let Some((lambda_theta, epsilon)) = pending.pop() {
            let params = DualParams { lambda_theta, epsilon, ..cfg.params };
            let r = damped_newton(cs, phi, &params, &cfg.newton, &alpha);
            match r {
                Ok(state) => {
                    stage_iterations[stage] += state.iterations;
                    alpha = state.alpha.clone();
                    last_good = Some((lambda_theta, epsilon));
                    last = Some(state);
                }
                Err(Error::Convergence { iterations, .. }) if refinements < MAX_REFINEMENTS => {
                    stage_iterations[stage] += iterations;
                    refinements += 1;
                    let mid = match last_good {
                        Some((lt, eps)) => ((lt * lambda_theta).sqrt(), (eps * epsilon).sqrt()),
                        None => (10.0 * lambda_theta, 10.0 * epsilon),
                    };
                    pending.push((lambda_theta, epsilon));
                    pending.push(mid);
                }
                Err(e) => return Err(Error::Stage { stage, source: Box::new(e) }),
            }
        }
    }
    let state = last.expect("at least one stage");
    let mut solution = recover_primal(cs, phi, &cfg.params, &state)?;
    solution.diagnostics.iterations = stage_iterations.iter().sum();
    solution.diagnostics.stage_iterations = stage_iterations;
    solution.diagnostics.wall_time = start.elapsed();
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_homotopy() {
        let cfg = SolverConfig::new(1e-3, 1e-6, 1e2, 1e-4).unwrap();
        assert_eq!(cfg.homotopy.len(), 4);
        let (lt, eps) = cfg.homotopy[0];
        assert!((lt - 1e-3).abs() < 1e-18 && (eps - 1e-1).abs() < 1e-15);
        assert_eq!(*cfg.homotopy.last().unwrap(), (1e-6, 1e-4));
        cfg.validate().unwrap();
        assert!(SolverConfig::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(cfg.clone().with_homotopy(vec![(1.0, 1.0), (1.0, 1e-4)]).is_err());
        assert!(cfg.with_homotopy(vec![]).is_err());
    }

    #[test]
    fn embedding() {
        let s = Sample { t: 1.0, x: vec![0.5, -0.25], u: vec![3.0] };
        let e = guided_embedding(&s, 5, 10.0, 1.0).unwrap();
        assert_eq!(e.len(), 11);
        assert_eq!(e.as_slice()[..3], [0.3, 0.5, -0.25]);
        assert!(e.as_slice()[3..].iter().all(|v| v.abs() < 1e-16));
        let s = Sample { t: 0.3, x: vec![0.0, 0.0], u: vec![10.0] };
        let e = guided_embedding(&s, 5, 10.0, 1.0).unwrap();
        assert_eq!(e[0], 1.0);
        assert!(e.as_slice()[1..].iter().all(|&v| v == 0.0));
        assert!(guided_embedding(&s, 0, 10.0, 1.0).is_err());
    }
}
