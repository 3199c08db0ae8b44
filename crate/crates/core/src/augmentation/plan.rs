use serde::{Deserialize, Serialize};

use super::transforms::{apply_transform, TransformKind, TransformSpec};
use super::AugmentError;
use crate::dataset::{ExampleId, PixelGrid};
use crate::seed::{derive_seed, rng_from};

fn default_copies() -> u32 {
    5
}

/// Ordered transform recipe applied to each training image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub transforms: Vec<TransformSpec>,
    #[serde(default = "default_copies")]
    pub copies_per_image: u32,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        let half = |kind| TransformSpec::new(kind, 0.5);
        Self {
            transforms: vec![
                half(TransformKind::HFlip),
                half(TransformKind::VFlip),
                half(TransformKind::Rot90),
                half(TransformKind::shift_scale_rotate()),
                half(TransformKind::brightness_contrast()),
                half(TransformKind::hue_saturation()),
                TransformSpec::new(TransformKind::random_resized_crop(), 1.0),
                half(TransformKind::gaussian_blur()),
                half(TransformKind::clahe()),
                half(TransformKind::coarse_dropout()),
            ],
            copies_per_image: default_copies(),
            seed: 0,
        }
    }
}

impl AugmentationPlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.copies_per_image < 1 {
            return Err(AugmentError::Plan("copies_per_image must be at least 1".into()));
        }
        self.transforms.iter().try_for_each(TransformSpec::validate)
    }

    /// Runs the recipe for copy `copy` of the original `root`. The generator
    /// is keyed by (plan seed, root id, copy) only.
    pub fn augment(&self, base: &PixelGrid, root: &ExampleId, copy: u32) -> Result<PixelGrid, AugmentError> {
        let mut rng = rng_from(augmentation_seed(self.seed, root, copy));
        let mut image = base.clone();
        for spec in &self.transforms {
            image = apply_transform(spec, &image, &mut rng)?;
        }
        Ok(image)
    }
}

/// Seed for one augmented copy.
pub fn augmentation_seed(plan_seed: u64, root: &ExampleId, copy: u32) -> u64 {
    derive_seed(plan_seed, &[root.as_str().as_bytes(), &copy.to_le_bytes()])
}
