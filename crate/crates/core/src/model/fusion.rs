//! The two-branch fusion network.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoder::{ConvEncoder, EncoderFamily, EncoderSpec, EncoderTrace, MAX_WIDTH};
use super::layers::{glorot_uniform, he_normal, relu_backward, relu_in_place, Dense, LayerParams};
use super::loss::softmax;
use super::ModelError;
use crate::dataset::{ClassTaxonomy, METADATA_DIM, TARGET_SIZE};
use crate::seed::rng_from;

/// Widths of the metadata branch and fusion head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub metadata_hidden: usize,
    pub metadata_embed: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub input_size: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Build(format!("dropout {} outside [0,1)", self.dropout)));
        }
        for (name, w) in [
            ("metadata_hidden", self.metadata_hidden),
            ("metadata_embed", self.metadata_embed),
            ("head_hidden", self.head_hidden),
        ] {
            if w == 0 || w > MAX_WIDTH {
                return Err(ModelError::Build(format!("{name} must be in 1..={MAX_WIDTH}, got {w}")));
            }
        }
        if !(MIN_INPUT..=MAX_INPUT).contains(&self.input_size) {
            return Err(ModelError::Build(format!(
                "input_size must be in {MIN_INPUT}..={MAX_INPUT}, got {}",
                self.input_size
            )));
        }
        Ok(())
    }
}

pub const MIN_INPUT: usize = 64;
pub const MAX_INPUT: usize = 1024;

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            metadata_hidden: 32,
            metadata_embed: 16,
            head_hidden: 128,
            dropout: 0.3,
            input_size: TARGET_SIZE as usize,
        }
    }
}

/// All trainable tensors of a [`FusionModel`]; the same shape doubles as the
/// gradient and optimiser-moment container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub encoder: Vec<LayerParams>,
    pub metadata: Vec<LayerParams>,
    pub head: Vec<LayerParams>,
}

/// Which parameter groups receive updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    /// Index of the first encoder block that trains; the encoder depth means
    /// a fully frozen backbone.
    pub encoder_from: usize,
    pub metadata: bool,
    pub head: bool,
}

impl FusionParams {
    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<LayerParams>| v.iter().map(LayerParams::zeros_like).collect();
        Self {
            encoder: z(&self.encoder),
            metadata: z(&self.metadata),
            head: z(&self.head),
        }
    }

    pub fn add_assign(&mut self, other: &FusionParams) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y);
            }
        }
    }

    fn groups(&self) -> [&Vec<LayerParams>; 3] {
        [&self.encoder, &self.metadata, &self.head]
    }

    fn groups_mut(&mut self) -> [&mut Vec<LayerParams>; 3] {
        [&mut self.encoder, &mut self.metadata, &mut self.head]
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (group, layers) in ["encoder", "metadata", "head"].into_iter().zip(self.groups()) {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{group}.{i}.weight"), l.weight.as_slice()));
                out.push((format!("{group}.{i}.bias"), l.bias.as_slice()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layers in self.groups_mut() {
            for l in layers.iter_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    /// Per-tensor trainability in [`FusionParams::tensors`] order.
    pub fn trainable_mask(&self, trainable: Trainable) -> Vec<bool> {
        let mut mask = Vec::new();
        for i in 0..self.encoder.len() {
            mask.extend([i >= trainable.encoder_from; 2]);
        }
        mask.extend(std::iter::repeat_n(trainable.metadata, 2 * self.metadata.len()));
        mask.extend(std::iter::repeat_n(trainable.head, 2 * self.head.len()));
        mask
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations of one forward pass, consumed by [`FusionModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    encoder: EncoderTrace,
    metadata_in: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    fused: Vec<f64>,
    h1: Vec<f64>,
    dropout_scale: Option<Vec<f64>>,
    h1_dropped: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Image encoder + metadata MLP, concatenated and classified by a dense head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub spec: EncoderSpec,
    pub taxonomy: ClassTaxonomy,
    pub config: FusionConfig,
    pub encoder: ConvEncoder,
    metadata_layers: [Dense; 2],
    head_layers: [Dense; 2],
    pub params: FusionParams,
}

/// Builds a seeded fusion network for `taxonomy`.
pub fn build_model(
    spec: &EncoderSpec,
    taxonomy: &ClassTaxonomy,
    metadata_dim: usize,
    config: &FusionConfig,
    seed: u64,
) -> Result<FusionModel, ModelError> {
    let layout = FusionModel::layout(spec, taxonomy, metadata_dim, config)?;
    let mut rng = rng_from(seed);
    let (_, encoder) = ConvEncoder::desk(spec.feature_dim, config.input_size, &mut rng)?;
    let relu_layer = |d: &Dense, rng: &mut dyn rand::RngCore| LayerParams {
        weight: he_normal(rng, d.inputs, d.inputs * d.outputs),
        bias: vec![0.0; d.outputs],
    };
    let metadata = layout.metadata_layers.iter().map(|d| relu_layer(d, &mut rng)).collect();
    let last = layout.head_layers[1];
    let head = vec![
        relu_layer(&layout.head_layers[0], &mut rng),
        LayerParams {
            weight: glorot_uniform(&mut rng, last.inputs, last.outputs, last.inputs * last.outputs),
            bias: vec![0.0; last.outputs],
        },
    ];
    let mut model = FusionModel {
        params: FusionParams {
            encoder,
            metadata,
            head,
        },
        ..layout
    };
    if spec.pretrained {
        let path = spec.weights.as_ref().expect("validated above");
        let donor = super::checkpoint::Checkpoint::load(path)?;
        model.load_encoder_from(&donor.model)?;
    }
    Ok(model)
}

impl FusionModel {
    /// Architecture with empty parameter tensors.
    pub(crate) fn layout(
        spec: &EncoderSpec,
        taxonomy: &ClassTaxonomy,
        metadata_dim: usize,
        config: &FusionConfig,
    ) -> Result<FusionModel, ModelError> {
        spec.validate()?;
        config.validate()?;
        if metadata_dim != METADATA_DIM {
            return Err(ModelError::Build(format!(
                "metadata vectors have {METADATA_DIM} fields, got metadata_dim {metadata_dim}"
            )));
        }
        let encoder = match spec.family {
            EncoderFamily::DeskCnn => ConvEncoder::desk_layout(spec.feature_dim, config.input_size)?,
            EncoderFamily::EfficientNetV2B1 => {
                return Err(ModelError::Build(
                    "the efficientnetv2_b1 backbone is not bundled with this build; use desk_cnn \
                     or plug in an encoder implementation"
                        .into(),
                ))
            }
        };
        let fused = encoder.feature_dim() + config.metadata_embed;
        Ok(FusionModel {
            spec: spec.clone(),
            taxonomy: taxonomy.clone(),
            config: config.clone(),
            encoder,
            metadata_layers: [
                Dense { inputs: METADATA_DIM, outputs: config.metadata_hidden },
                Dense { inputs: config.metadata_hidden, outputs: config.metadata_embed },
            ],
            head_layers: [
                Dense { inputs: fused, outputs: config.head_hidden },
                Dense { inputs: config.head_hidden, outputs: taxonomy.len() },
            ],
            params: FusionParams {
                encoder: Vec::new(),
                metadata: Vec::new(),
                head: Vec::new(),
            },
        })
    }

    /// Tensor names and lengths in [`FusionParams::tensors`] order.
    pub(crate) fn tensor_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        let mut push = |group: &str, i: usize, w: usize, b: usize| {
            out.push((format!("{group}.{i}.weight"), w));
            out.push((format!("{group}.{i}.bias"), b));
        };
        for (i, c) in self.encoder.convs.iter().enumerate() {
            push("encoder", i, c.weight_len(), c.out_channels);
        }
        for (i, d) in self.metadata_layers.iter().enumerate() {
            push("metadata", i, d.inputs * d.outputs, d.outputs);
        }
        for (i, d) in self.head_layers.iter().enumerate() {
            push("head", i, d.inputs * d.outputs, d.outputs);
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.head_layers[1].outputs
    }

    pub fn fused_width(&self) -> usize {
        self.head_layers[0].inputs
    }

    pub fn metadata_embed_width(&self) -> usize {
        self.metadata_layers[1].outputs
    }

    pub fn image_len(&self) -> usize {
        3 * self.config.input_size * self.config.input_size
    }

    /// Trainability with the backbone fully frozen.
    pub fn frozen_backbone(&self) -> Trainable {
        Trainable {
            encoder_from: self.encoder.depth(),
            metadata: true,
            head: true,
        }
    }

    /// Trainability with the top `fraction` of encoder blocks (by depth,
    /// rounded up) unfrozen.
    pub fn partially_unfrozen(&self, fraction: f64) -> Trainable {
        let depth = self.encoder.depth();
        let open = ((fraction.clamp(0.0, 1.0) * depth as f64).ceil() as usize).min(depth);
        Trainable {
            encoder_from: depth - open,
            metadata: true,
            head: true,
        }
    }

    fn check_inputs(&self, image: &[f64], metadata: &[f64]) -> Result<(), ModelError> {
        if image.len() != self.image_len() {
            return Err(ModelError::Shape(format!(
                "image has {} values, expected 3x{s}x{s} = {}",
                image.len(),
                self.image_len(),
                s = self.config.input_size
            )));
        }
        if metadata.len() != METADATA_DIM {
            return Err(ModelError::Shape(format!(
                "metadata has {} values, expected {METADATA_DIM}",
                metadata.len()
            )));
        }
        Ok(())
    }

    /// Forward pass on one example. Passing a generator enables dropout.
    pub fn forward(
        &self,
        image: &[f64],
        metadata: &[f64],
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<ForwardTrace, ModelError> {
        self.check_inputs(image, metadata)?;
        let p = &self.params;
        let (features, encoder) = self.encoder.forward(&p.encoder, image);
        let mut m1 = self.metadata_layers[0].forward(&p.metadata[0], metadata);
        relu_in_place(&mut m1);
        let mut m2 = self.metadata_layers[1].forward(&p.metadata[1], &m1);
        relu_in_place(&mut m2);
        let mut fused = features;
        fused.extend_from_slice(&m2);
        let mut h1 = self.head_layers[0].forward(&p.head[0], &fused);
        relu_in_place(&mut h1);
        let rate = self.config.dropout;
        let dropout_scale = match dropout_rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                Some((0..h1.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect::<Vec<_>>())
            }
            _ => None,
        };
        let h1_dropped = match &dropout_scale {
            Some(scale) => h1.iter().zip(scale).map(|(a, s)| a * s).collect(),
            None => h1.clone(),
        };
        let logits = self.head_layers[1].forward(&p.head[1], &h1_dropped);
        Ok(ForwardTrace {
            encoder,
            metadata_in: metadata.to_vec(),
            m1,
            m2,
            fused,
            h1,
            dropout_scale,
            h1_dropped,
            logits,
        })
    }

    /// Accumulates parameter gradients for `dlogits` into `grads`.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f64], grads: &mut FusionParams, trainable: Trainable) {
        let p = &self.params;
        let encoder_trains = trainable.encoder_from < self.encoder.depth();
        let need_fused_grad = trainable.metadata || encoder_trains;

        let mut scratch = p.head[1].zeros_like();
        let head_out = if trainable.head { &mut grads.head[1] } else { &mut scratch };
        let mut gh = self.head_layers[1]
            .backward(&p.head[1], &trace.h1_dropped, dlogits, head_out, true)
            .expect("input gradient requested");
        if let Some(scale) = &trace.dropout_scale {
            for (g, s) in gh.iter_mut().zip(scale) {
                *g *= s;
            }
        }
        relu_backward(&trace.h1, &mut gh);
        let mut scratch = p.head[0].zeros_like();
        let head_in = if trainable.head { &mut grads.head[0] } else { &mut scratch };
        let Some(gfused) = self.head_layers[0].backward(&p.head[0], &trace.fused, &gh, head_in, need_fused_grad) else {
            return;
        };
        let (gfeatures, gm2) = gfused.split_at(self.encoder.feature_dim());

        if trainable.metadata {
            let mut gm2 = gm2.to_vec();
            relu_backward(&trace.m2, &mut gm2);
            let mut gm1 = self.metadata_layers[1]
                .backward(&p.metadata[1], &trace.m1, &gm2, &mut grads.metadata[1], true)
                .expect("input gradient requested");
            relu_backward(&trace.m1, &mut gm1);
            self.metadata_layers[0].backward(&p.metadata[0], &trace.metadata_in, &gm1, &mut grads.metadata[0], false);
        }
        if encoder_trains {
            self.encoder
                .backward(&p.encoder, &trace.encoder, gfeatures, &mut grads.encoder, trainable.encoder_from);
        }
    }

    /// Logits in inference mode.
    pub fn logits(&self, image: &[f64], metadata: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward(image, metadata, None)?.logits)
    }

    /// Class probabilities in inference mode; the argmax is the prediction.
    pub fn predict(&self, image: &[f64], metadata: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(softmax(&self.logits(image, metadata)?))
    }

    /// Hex SHA-256 over the encoder tensors.
    pub fn encoder_checksum(&self) -> String {
        let mut h = Sha256::new();
        for layer in &self.params.encoder {
            for v in layer.weight.iter().chain(&layer.bias) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies encoder tensors from a donor with the same backbone shape.
    pub fn load_encoder_from(&mut self, donor: &FusionModel) -> Result<(), ModelError> {
        if donor.encoder != self.encoder {
            return Err(ModelError::Build(
                "pretrained weights do not match the encoder architecture".into(),
            ));
        }
        self.params.encoder = donor.params.encoder.clone();
        Ok(())
    }
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(k: ClassTaxonomy) -> FusionModel {
        build_model(&EncoderSpec::desk_scale(), &k, METADATA_DIM, &FusionConfig::default(), 3).unwrap()
    }

    #[test]
    fn shapes_and_normalisation() {
        let m = desk(ClassTaxonomy::four_class());
        assert_eq!(m.num_classes(), 4);
        assert_eq!(m.fused_width(), 64 + 16);
        let probs = m.predict(&vec![0.3; m.image_len()], &[0.5, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(probs.len(), 4);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_inputs_give_finite_logits() {
        let m = desk(ClassTaxonomy::two_class());
        let logits = m.logits(&vec![0.0; m.image_len()], &[0.0; 5]).unwrap();
        assert_eq!(logits.len(), 2);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn build_errors() {
        let tax = ClassTaxonomy::two_class();
        let cfg = FusionConfig::default();
        assert!(matches!(
            build_model(&EncoderSpec::desk_scale(), &tax, 4, &cfg, 1),
            Err(ModelError::Build(_))
        ));
        assert!(matches!(
            build_model(&EncoderSpec::efficientnet_v2_b1(), &tax, 5, &cfg, 1),
            Err(ModelError::Build(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = desk(ClassTaxonomy::two_class());
        assert!(matches!(m.predict(&[0.0; 10], &[0.0; 5]), Err(ModelError::Shape(_))));
        assert!(matches!(m.predict(&vec![0.0; m.image_len()], &[0.0; 4]), Err(ModelError::Shape(_))));
    }

    #[test]
    fn unfreeze_fraction_rounds_up() {
        let m = desk(ClassTaxonomy::two_class());
        assert_eq!(m.partially_unfrozen(0.3).encoder_from, 2);
        assert_eq!(m.partially_unfrozen(0.0).encoder_from, 3);
        assert_eq!(m.partially_unfrozen(1.0).encoder_from, 0);
        let mask = m.params.trainable_mask(m.partially_unfrozen(0.3));
        assert_eq!(&mask[..6], &[false, false, false, false, true, true]);
    }

    #[test]
    fn gradients_match_finite_differences_everywhere() {
        use crate::model::loss::{cross_entropy_grad, ClassWeights};
        use rand::Rng;
        let spec = EncoderSpec {
            feature_dim: 8,
            ..EncoderSpec::desk_scale()
        };
        let cfg = FusionConfig {
            metadata_embed: 4,
            input_size: 64,
            ..FusionConfig::default()
        };
        let mut model = build_model(&spec, &ClassTaxonomy::two_class(), METADATA_DIM, &cfg, 11).unwrap();
        let mut rng = rng_from(2);
        let image: Vec<f64> = (0..model.image_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let meta = [0.4, 1.0, 0.0, 1.0, 1.0];
        let weights = ClassWeights { weights: vec![1.5, 0.75] };
        let loss = |m: &FusionModel| {
            let logits = m.logits(&image, &meta).unwrap();
            cross_entropy_grad(&logits, 0, &weights, 1).unwrap().0
        };
        let trace = model.forward(&image, &meta, None).unwrap();
        let (_, dlogits) = cross_entropy_grad(&trace.logits, 0, &weights, 1).unwrap();
        let mut grads = model.params.zeros_like();
        let all = Trainable { encoder_from: 0, metadata: true, head: true };
        model.backward(&trace, &dlogits, &mut grads, all);
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.to_vec()).collect();
        for (ti, grad) in analytic.iter().enumerate() {
            for k in 0..grad.len().min(6) {
                let idx = (k * 7919) % grad.len();
                let orig = model.params.tensors_mut()[ti][idx];
                model.params.tensors_mut()[ti][idx] = orig + 1e-5;
                let up = loss(&model);
                model.params.tensors_mut()[ti][idx] = orig - 1e-5;
                let dn = loss(&model);
                model.params.tensors_mut()[ti][idx] = orig;
                let fd = (up - dn) / 2e-5;
                let a = grad[idx];
                let rel = (fd - a).abs() / (fd.abs() + a.abs()).max(1e-6);
                assert!(rel < 1e-4, "tensor {ti} index {idx}: analytic {a} numeric {fd}");
            }
        }
    }

    #[test]
    fn argmax_picks_first_max() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[2.0, 0.0]), 0);
    }
}
