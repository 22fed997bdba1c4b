//! Orchestration for the augmentation pipeline: configuration, seeded
//! per-scene runs and the stage helpers used by the `groundaug` binary.

pub mod config;
pub mod pipeline;
pub mod seeds;
pub mod stages;

pub use config::{load_config, ConfigError, PipelineConfig};
pub use pipeline::{run_augment, PipelineError, RunOptions, RunReport, SceneReport};
