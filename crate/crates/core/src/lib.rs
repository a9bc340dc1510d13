//! Sequential change detection over reconfigurable sensor networks with
//! e-values, e-BH selection and optional boosting.

pub mod boosting;
pub mod config;
pub mod detector;
pub mod evalue;
pub mod models;
pub mod pipeline;
pub mod sim;
pub mod special;
pub mod types;

pub use config::{ChangeSpec, Method, ScenarioConfig};
pub use detector::{ebh_select, DetectionReport};
pub use evalue::EValueEngine;
pub use models::{LikelihoodModel, ModelSpec, NullLrLaw};
pub use pipeline::{DetectionPipeline, PipelineSettings};
pub use sim::metrics::{compute_metrics, MetricsSummary};
pub use sim::montecarlo::{monte_carlo, monte_carlo_with_threads};
pub use sim::policy::PolicySpec;
pub use types::{ChangePoint, SensorId, SensorSet};
