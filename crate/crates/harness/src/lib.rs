//! Benchmark generation, policy rollouts, detector training and evaluation,
//! reporting and auditing for instruction-error benchmarks.

pub mod audit;
pub mod config;
pub mod data;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, Method, PipelineRun, PolicyKind};
pub use report::{render_table, Report};
