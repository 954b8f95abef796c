//! Experiment driver: configuration, checkpoints, connector training,
//! evaluation, sweeps and gradient checks.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod pipeline;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, Container};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use pipeline::Pipeline;
