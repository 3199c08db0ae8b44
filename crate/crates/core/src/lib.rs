//! Multimodal classification of oral-lesion photographs paired with patient
//! metadata.
//!
//! The crate is organised as the pipeline runs:
//!
//! - [`dataset`]: class taxonomies, metadata ingestion, image ingestion,
//!   resizing and the stratified split manifest.
//! - [`augmentation`]: pixel scaling/standardisation, the transform recipe,
//!   training-set expansion and minority oversampling.
//! - [`model`]: the two-branch fusion network, its loss, the Adam optimiser,
//!   the two-stage training schedule and checkpoints.
//! - [`evaluation`]: confusion matrices and per-class reports.
//! - [`pipeline`]: config-driven orchestration used by the command line tool.

pub mod augmentation;
pub mod dataset;
pub mod evaluation;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod synthetic;

pub use dataset::{ClassTaxonomy, LabeledExample, LesionClass, Origin, PatientMetadata};
