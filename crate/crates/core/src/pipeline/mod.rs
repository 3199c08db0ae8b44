//! Config-driven orchestration of prepare → augment → train → evaluate.

mod commands;
mod config;
mod error;
mod manifest;

pub use commands::{
    cmd_augment, cmd_evaluate, cmd_prepare, cmd_train, load_base, refresh_run_manifest, run_all, run_stage,
    DatasetStats, ImageSamples, Layout, PrepareOutcome, RunAllOutcome, Stage, TrainSummary,
};
pub use config::{AugmentationSection, DeskScale, ModelSection, Overrides, PipelineConfig, ResolvedSeeds};
pub use error::PipelineError;
pub use manifest::{AugmentedManifest, ManifestError, RunManifest, StageCounts, SubsetCounts, Timing};
