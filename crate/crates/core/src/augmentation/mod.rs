//! Pixel normalisation, the augmentation recipe, training-set expansion and
//! minority oversampling.

mod clahe;
mod error;
mod expand;
mod normalize;
mod plan;
mod transforms;

pub use clahe::clahe_luma;
pub use error::AugmentError;
pub use expand::{
    expand_training_set, materialize_augmented, oversample_minority, render_example,
    render_hashes, OVERSAMPLE_THRESHOLD,
};
pub use normalize::{scale_to_unit, standardize, FloatImage, NormalizationParams};
pub use plan::{augmentation_seed, AugmentationPlan};
pub use transforms::{
    apply_transform, coarse_dropout, gaussian_blur, h_flip, rot90, v_flip, TransformKind,
    TransformSpec,
};
