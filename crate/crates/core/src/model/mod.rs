//! The image + metadata fusion classifier and its training loop.

mod adam;
mod callbacks;
mod checkpoint;
mod encoder;
mod error;
mod fusion;
pub mod layers;
mod loss;
mod train;

pub use adam::Adam;
pub use callbacks::{EarlyStopping, ReduceLrOnPlateau};
pub use checkpoint::{Checkpoint, CheckpointInfo, MetadataEncoding, MAGIC};
pub use encoder::{ConvEncoder, EncoderFamily, EncoderSpec, MAX_WIDTH};
pub use error::ModelError;
pub use fusion::{argmax, build_model, ForwardTrace, FusionConfig, FusionModel, FusionParams, Trainable};
pub use loss::{compute_class_weights, cross_entropy_grad, softmax, weighted_cross_entropy, ClassWeights};
pub use train::*;
