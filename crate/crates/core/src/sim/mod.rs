//! Monte-Carlo simulation of reconfigurable networks with ground truth.

pub mod metrics;
pub mod montecarlo;
pub mod policy;
pub mod run;

use thiserror::Error;

use crate::config::ConfigError;
use crate::models::ModelError;
use crate::pipeline::PipelineError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("no traces to aggregate")]
    EmptyTraceList,
    #[error("trace deadline {got} differs from {expected}")]
    MismatchedHorizons { expected: u32, got: u32 },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}
