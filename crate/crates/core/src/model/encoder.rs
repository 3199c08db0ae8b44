//! Image branch backbones.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, global_avg_pool, he_normal, relu_backward, relu_in_place,
    Conv3x3, LayerParams,
};
use super::ModelError;

/// Named image backbones. Only the desk-scale network is built in-tree; other
/// families are recognised so configs can name them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    /// Three conv blocks (conv 3×3 stride 2, ReLU, 2×2 average pool) and
    /// global average pooling.
    DeskCnn,
    /// Compound-scaled EfficientNetV2-B1.
    #[serde(rename = "efficientnetv2_b1")]
    EfficientNetV2B1,
}

/// Upper bound on any layer width.
pub const MAX_WIDTH: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: EncoderFamily,
    #[serde(default)]
    pub pretrained: bool,
    pub feature_dim: usize,
    /// Checkpoint whose encoder tensors seed the image branch when
    /// `pretrained` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl EncoderSpec {
    pub fn desk_scale() -> Self {
        Self {
            family: EncoderFamily::DeskCnn,
            pretrained: false,
            feature_dim: 64,
            weights: None,
        }
    }

    pub fn efficientnet_v2_b1() -> Self {
        Self {
            family: EncoderFamily::EfficientNetV2B1,
            pretrained: true,
            feature_dim: 1280,
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feature_dim == 0 || self.feature_dim > MAX_WIDTH {
            return Err(ModelError::Build(format!(
                "feature_dim must be in 1..={MAX_WIDTH}, got {}",
                self.feature_dim
            )));
        }
        if self.pretrained && self.weights.is_none() && self.family == EncoderFamily::DeskCnn {
            return Err(ModelError::Build(
                "pretrained desk_cnn encoder needs a `weights` checkpoint".into(),
            ));
        }
        Ok(())
    }
}

/// Activations kept from the forward pass of one conv block.
#[derive(Clone, Debug)]
pub(crate) struct BlockTrace {
    input: Vec<f64>,
    in_hw: (usize, usize),
    activated: Vec<f64>,
    conv_hw: (usize, usize),
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderTrace {
    blocks: Vec<BlockTrace>,
    pooled_hw: (usize, usize),
}

/// Stack of conv blocks followed by global average pooling. Parameters live
/// alongside, one [`LayerParams`] per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoder {
    pub convs: Vec<Conv3x3>,
    pub input_size: usize,
}

impl ConvEncoder {
    /// Channel widths `feature_dim/4, feature_dim/2, feature_dim` (at least 1).
    pub fn desk_layout(feature_dim: usize, input_size: usize) -> Result<Self, ModelError> {
        let widths = [(feature_dim / 4).max(1), (feature_dim / 2).max(1), feature_dim];
        let mut convs = Vec::new();
        let mut in_channels = 3;
        let mut side = input_size;
        for &out_channels in &widths {
            let conv = Conv3x3 {
                in_channels,
                out_channels,
                stride: 2,
            };
            side = if side == 0 { 0 } else { conv.output_size(side, side).0 / 2 };
            if side == 0 {
                return Err(ModelError::Build(format!(
                    "input size {input_size} is too small for {} conv blocks",
                    widths.len()
                )));
            }
            convs.push(conv);
            in_channels = out_channels;
        }
        Ok(Self { convs, input_size })
    }

    /// Desk layout with He-normal weights and zero biases.
    pub fn desk<R: Rng + ?Sized>(
        feature_dim: usize,
        input_size: usize,
        rng: &mut R,
    ) -> Result<(Self, Vec<LayerParams>), ModelError> {
        let enc = Self::desk_layout(feature_dim, input_size)?;
        let params = enc
            .convs
            .iter()
            .map(|c| LayerParams {
                weight: he_normal(rng, c.in_channels * 9, c.weight_len()),
                bias: vec![0.0; c.out_channels],
            })
            .collect();
        Ok((enc, params))
    }

    pub fn feature_dim(&self) -> usize {
        self.convs.last().map_or(0, |c| c.out_channels)
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    pub(crate) fn forward(&self, params: &[LayerParams], image: &[f64]) -> (Vec<f64>, EncoderTrace) {
        let mut x = image.to_vec();
        let (mut h, mut w) = (self.input_size, self.input_size);
        let mut blocks = Vec::with_capacity(self.convs.len());
        for (conv, p) in self.convs.iter().zip(params) {
            let mut activated = conv.forward(p, &x, h, w);
            relu_in_place(&mut activated);
            let (ch, cw) = conv.output_size(h, w);
            let pooled = avg_pool2(&activated, conv.out_channels, ch, cw);
            blocks.push(BlockTrace {
                input: std::mem::replace(&mut x, pooled),
                in_hw: (h, w),
                activated,
                conv_hw: (ch, cw),
            });
            (h, w) = (ch / 2, cw / 2);
        }
        let features = global_avg_pool(&x, self.feature_dim(), h, w);
        (features, EncoderTrace { blocks, pooled_hw: (h, w) })
    }

    /// Backpropagates into blocks `first_trainable..`; earlier blocks are
    /// skipped entirely.
    pub(crate) fn backward(
        &self,
        params: &[LayerParams],
        trace: &EncoderTrace,
        gfeatures: &[f64],
        grads: &mut [LayerParams],
        first_trainable: usize,
    ) {
        if first_trainable >= self.convs.len() {
            return;
        }
        let (h, w) = trace.pooled_hw;
        let n = (h * w) as f64;
        let mut g: Vec<f64> = gfeatures.iter().flat_map(|&gf| std::iter::repeat_n(gf / n, h * w)).collect();
        for idx in (first_trainable..self.convs.len()).rev() {
            let conv = &self.convs[idx];
            let block = &trace.blocks[idx];
            let (ch, cw) = block.conv_hw;
            let mut gact = avg_pool2_backward(&g, conv.out_channels, ch, cw);
            relu_backward(&block.activated, &mut gact);
            let (ih, iw) = block.in_hw;
            let want_input = idx > first_trainable;
            match conv.backward(&params[idx], &block.input, ih, iw, &gact, &mut grads[idx], want_input) {
                Some(gx) => g = gx,
                None => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn desk_encoder_shapes() {
        let (enc, params) = ConvEncoder::desk(64, 224, &mut rng_from(1)).unwrap();
        assert_eq!(enc.feature_dim(), 64);
        assert_eq!(enc.depth(), 3);
        let (f, _) = enc.forward(&params, &vec![0.1; 3 * 224 * 224]);
        assert_eq!(f.len(), 64);
        assert!(f.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(ConvEncoder::desk(8, 16, &mut rng_from(1)).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = EncoderSpec::desk_scale();
        s.validate().unwrap();
        s.feature_dim = 0;
        assert!(s.validate().is_err());
        let s = EncoderSpec { pretrained: true, ..EncoderSpec::desk_scale() };
        assert!(s.validate().is_err());
    }
}
