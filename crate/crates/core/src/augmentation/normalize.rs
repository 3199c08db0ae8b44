use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::dataset::PixelGrid;

/// Per-channel mean and standard deviation used to standardise pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormalizationParams {
    /// The usual large-corpus (ImageNet) channel statistics.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(AugmentError::Param(format!("non-finite mean {:?}", self.mean)));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(AugmentError::Param(format!(
                "standard deviations must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }
}

/// Real-valued RGB image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl FloatImage {
    /// Planar copy (channel, row, column) for convolution.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width as usize * self.height as usize;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c];
            }
        }
        out
    }
}

/// Maps 8-bit samples to [0, 1] by dividing by 255.
pub fn scale_to_unit(image: &PixelGrid) -> FloatImage {
    FloatImage {
        width: image.width(),
        height: image.height(),
        data: image.data().iter().map(|&v| f64::from(v) / 255.0).collect(),
    }
}

/// Channel-wise `(x - mean) / std`.
pub fn standardize(image: &FloatImage, params: &NormalizationParams) -> Result<FloatImage, AugmentError> {
    params.validate()?;
    let data = image
        .data
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] - params.mean[c]) / params.std[c]))
        .collect();
    Ok(FloatImage {
        width: image.width,
        height: image.height,
        data,
    })
}
