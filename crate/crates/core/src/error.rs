use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("no convergence after {iterations} iterations (last decrement {decrement:e})")]
    Convergence { iterations: usize, decrement: f64 },

    #[error("factorization failed at pivot {pivot}")]
    Factorization { pivot: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("assembly failed at sample {index}: {reason}")]
    Assembly { index: usize, reason: String },

    #[error("homotopy stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rollout diverged for {} initial point(s), first at t = {first_time}", failed.len())]
    RolloutFailures { failed: Vec<usize>, first_time: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
