//! Experiment runner comparing the LP, guided-SoS and kernel-SoS
//! subsolution methods on sample-count sweeps.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{ExperimentConfig, Method};
pub use experiment::{run_experiment, write_outputs, ExperimentResult, Row, RunOptions};
