//! Batch driver for the meshflow toolkit: configuration, per-asset pipeline
//! runs with a JSON-lines manifest, and the `verify` self-check suites.

pub mod artifacts;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod verify;

pub use config::PipelineConfig;
pub use manifest::{read_manifest, AssetRecord, StageStatus};
pub use pipeline::{process_asset, run_pipeline, RunSummary};
