//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file is the double-integrator
//! study with `n_t = 20`, `ε = 1e-4`, `η = 0`, `m_t = 10`, `q_t = 5` and
//! `n_x = n_u ∈ {5, 10, 15, 20}`.

use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;

use ksos_core::assembly::ObjectiveMode;
use ksos_core::kernels::{KernelKind, KernelSpec};
use ksos_core::solver::NewtonSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lp,
    Guided,
    Kernel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lp => "lp",
            Method::Guided => "guided",
            Method::Kernel => "kernel",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s.trim() {
            "lp" => Ok(Method::Lp),
            "guided" => Ok(Method::Guided),
            "kernel" => Ok(Method::Kernel),
            other => bail!("unknown method {other:?} (expected lp, guided or kernel)"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub basis: BasisConfig,
    pub kernel: KernelConfig,
    pub sampling: SamplingConfig,
    pub solver: SolverSection,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    LqrDoubleIntegrator,
    /// `f = 0`, `M = 0`, `L = (u − center)² + offset` on `u ∈ [−1, 1]`.
    Example1,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub horizon: f64,
    pub center: f64,
    pub offset: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { kind: ProblemKind::LqrDoubleIntegrator, horizon: 1.0, center: 0.3, offset: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    /// Temporal sine terms of the value basis.
    pub m_t: usize,
    /// Temporal terms of the guided embedding.
    pub q_t: usize,
    /// Controls enter the guided embedding as `u / guided_u_scale`.
    pub guided_u_scale: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { m_t: 10, q_t: 5, guided_u_scale: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    ControlAffine,
    Polynomial,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelChoice,
    pub u_scale: f64,
    pub t_scale: f64,
    pub degree: u32,
    pub scale: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { kind: KernelChoice::ControlAffine, u_scale: 100.0, t_scale: 1.0, degree: 2, scale: 1.0 }
    }
}

impl KernelConfig {
    pub fn spec(&self, state_dim: usize, control_dim: usize) -> anyhow::Result<KernelSpec> {
        let kind = match self.kind {
            KernelChoice::ControlAffine => KernelKind::ControlAffine { u_scale: self.u_scale, t_scale: self.t_scale },
            KernelChoice::Polynomial => KernelKind::Polynomial { degree: self.degree },
            KernelChoice::Exponential => KernelKind::Exponential { scale: self.scale },
        };
        Ok(KernelSpec::new(kind, state_dim, control_dim)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    AllSamples,
    InitialPoints,
}

impl From<Objective> for ObjectiveMode {
    fn from(o: Objective) -> Self {
        match o {
            Objective::AllSamples => ObjectiveMode::AllSamples,
            Objective::InitialPoints => ObjectiveMode::InitialPoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_t: usize,
    pub objective: Objective,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_t: 20, objective: Objective::AllSamples }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemChoice {
    Auto,
    Dense,
    LowRank,
}

impl From<SystemChoice> for NewtonSystem {
    fn from(s: SystemChoice) -> Self {
        match s {
            SystemChoice::Auto => NewtonSystem::Auto,
            SystemChoice::Dense => NewtonSystem::Dense,
            SystemChoice::LowRank => NewtonSystem::LowRank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    pub eta: f64,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Stages of the `(λ_θ, ε)` homotopy, each 10× below the previous.
    pub homotopy_stages: usize,
    pub newton_system: SystemChoice,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            eta: 0.0,
            newton_tol: 1e-8,
            max_newton_iters: 500,
            homotopy_stages: 4,
            newton_system: SystemChoice::Auto,
        }
    }
}

/// Hyperparameter values; the grid is their Cartesian product. The LP
/// ignores `lambda`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub lambda: Vec<f64>,
    pub lambda_theta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self { lambda: vec![1e-6], lambda_theta: vec![1e-8], gamma: vec![1e-2] }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `n_x = n_u` values.
    pub n_x: Vec<usize>,
    pub methods: Vec<Method>,
    pub lp: HyperGrid,
    pub guided: HyperGrid,
    pub kernel: HyperGrid,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_x: vec![5, 10, 15, 20],
            methods: vec![Method::Lp, Method::Guided, Method::Kernel],
            lp: HyperGrid {
                lambda: vec![],
                lambda_theta: vec![1e-8, 1e-5, 1e-3],
                gamma: vec![1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
            },
            guided: HyperGrid {
                lambda: vec![1e-9, 1e-6],
                lambda_theta: vec![1e-8, 1e-5],
                gamma: vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2],
            },
            kernel: HyperGrid {
                lambda: vec![1e-2],
                lambda_theta: vec![1e-8],
                gamma: vec![1e-3, 2e-3, 3e-3, 5e-3, 1e-2, 2e-2],
            },
        }
    }
}

impl SweepConfig {
    pub fn grid(&self, method: Method) -> &HyperGrid {
        match method {
            Method::Lp => &self.lp,
            Method::Guided => &self.guided,
            Method::Kernel => &self.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write value dumps of the selected models and the projection baseline.
    pub dump_values: bool,
    /// Record wall-clock solve times; off makes every output byte a
    /// function of the configuration.
    pub record_timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dump_values: true, record_timing: true }
    }
}

fn positive(name: &str, values: &[f64]) -> anyhow::Result<()> {
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        bail!("{name} values must be positive and finite, got {v}");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        positive("horizon", &[self.problem.horizon])?;
        if self.basis.m_t == 0 || self.basis.q_t == 0 {
            bail!("m_t and q_t must be at least 1");
        }
        positive("guided_u_scale", &[self.basis.guided_u_scale])?;
        if self.sampling.n_t == 0 {
            bail!("n_t must be at least 1");
        }
        positive("epsilon", &[self.solver.epsilon])?;
        if !(self.solver.eta >= 0.0) {
            bail!("eta must be nonnegative");
        }
        positive("newton_tol", &[self.solver.newton_tol])?;
        if self.solver.max_newton_iters == 0 || self.solver.homotopy_stages == 0 {
            bail!("max_newton_iters and homotopy_stages must be at least 1");
        }
        if self.sweep.n_x.is_empty() || self.sweep.n_x.contains(&0) {
            bail!("sweep n_x values must be at least 1");
        }
        if self.sweep.methods.is_empty() {
            bail!("no methods selected");
        }
        for method in [Method::Lp, Method::Guided, Method::Kernel] {
            let g = self.sweep.grid(method);
            let name = method.name();
            if method != Method::Lp {
                if g.lambda.is_empty() {
                    bail!("{name} grid needs at least one lambda");
                }
                positive(&format!("{name}.lambda"), &g.lambda)?;
            }
            if g.lambda_theta.is_empty() || g.gamma.is_empty() {
                bail!("{name} grid needs lambda_theta and gamma values");
            }
            positive(&format!("{name}.lambda_theta"), &g.lambda_theta)?;
            positive(&format!("{name}.gamma"), &g.gamma)?;
        }
        self.kernel.spec(2, 1)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.sampling.n_t, 20);
        assert_eq!(cfg.solver.epsilon, 1e-4);
        assert_eq!(cfg.sweep.n_x, vec![5, 10, 15, 20]);
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let cfg = ExperimentConfig::from_toml(include_str!("../configs/double_integrator.toml")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            [problem]
            kind = "example1"
            [sweep]
            n_x = [3]
            methods = ["lp"]
            [sweep.lp]
            lambda_theta = [1e-8]
            gamma = [1e8]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.problem.kind, ProblemKind::Example1);
        assert_eq!(cfg.sweep.methods, vec![Method::Lp]);
        assert_eq!(cfg.sweep.lp.gamma, vec![1e8]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("[solver]\nepsilon = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("[sweep]\nn_x = []").is_err());
        assert!(ExperimentConfig::from_toml("[sweep.kernel]\ngamma = [-1.0]").is_err());
        assert!(ExperimentConfig::from_toml("[solver]\nunknown = 1").is_err());
        assert!("sdp".parse::<Method>().is_err());
    }
}
