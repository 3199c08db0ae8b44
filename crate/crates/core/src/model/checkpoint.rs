//! Self-contained checkpoint files.
//!
//! Layout: the 8-byte magic `OFCKPT01`, a little-endian `u32` header length,
//! a JSON header, then every tensor as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::EncoderSpec;
use super::fusion::{FusionConfig, FusionModel, FusionParams};
use super::layers::LayerParams;
use super::ModelError;
use crate::augmentation::NormalizationParams;
use crate::dataset::{AgeScaler, ClassTaxonomy, METADATA_COLUMNS, METADATA_DIM};

pub const MAGIC: &[u8; 8] = b"OFCKPT01";
const MAX_HEADER: usize = 1 << 20;

/// How raw metadata columns were turned into the model's 5-vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataEncoding {
    pub columns: Vec<String>,
    pub gender: Vec<(String, u8)>,
    pub binary: Vec<(String, u8)>,
    pub age: String,
}

impl Default for MetadataEncoding {
    fn default() -> Self {
        Self {
            columns: METADATA_COLUMNS.iter().map(|c| c.to_string()).collect(),
            gender: vec![("male".into(), 1), ("female".into(), 0)],
            binary: vec![("yes".into(), 1), ("no".into(), 0)],
            age: "min-max over the metadata table, clamped to [0,1]".into(),
        }
    }
}

/// Where in training a checkpoint was taken.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub stage: u8,
    pub epoch: usize,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub normalization: NormalizationParams,
    pub encoding: MetadataEncoding,
    pub age_scaler: Option<AgeScaler>,
    pub info: CheckpointInfo,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: EncoderSpec,
    config: FusionConfig,
    taxonomy: ClassTaxonomy,
    metadata_dim: usize,
    normalization: NormalizationParams,
    encoding: MetadataEncoding,
    age_scaler: Option<AgeScaler>,
    info: CheckpointInfo,
    tensors: Vec<(String, usize)>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let tensors = self.model.params.tensors();
        let header = Header {
            spec: self.model.spec.clone(),
            config: self.model.config.clone(),
            taxonomy: self.model.taxonomy.clone(),
            metadata_dim: METADATA_DIM,
            normalization: self.normalization,
            encoding: self.encoding.clone(),
            age_scaler: self.age_scaler,
            info: self.info.clone(),
            tensors: tensors.iter().map(|(n, t)| (n.clone(), t.len())).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        if json.len() > MAX_HEADER {
            return Err(bad("header too large"));
        }
        let data_len: usize = tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
        let (len, rest) = rest.split_first_chunk::<4>().ok_or_else(|| bad("truncated header length"))?;
        let len = u32::from_le_bytes(*len) as usize;
        if len > MAX_HEADER || len > rest.len() {
            return Err(bad(format!("header length {len} exceeds file")));
        }
        let (json, data) = rest.split_at(len);
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        let mut model = FusionModel::layout(&header.spec, &header.taxonomy, header.metadata_dim, &header.config)?;
        let expected = model.tensor_layout();
        if expected != header.tensors {
            return Err(bad("tensor table does not match the recorded architecture"));
        }
        let total = expected
            .iter()
            .try_fold(0usize, |acc, (_, n)| acc.checked_add(*n))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad("tensor sizes overflow"))?;
        if total != data.len() {
            return Err(bad(format!("expected {total} bytes of tensor data, found {}", data.len())));
        }
        if header.normalization.validate().is_err() {
            return Err(bad("invalid normalization parameters"));
        }
        let mut values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let mut layers = expected.chunks(2).map(|pair| LayerParams {
            weight: take(pair[0].1),
            bias: take(pair[1].1),
        });
        let e = model.encoder.depth();
        let encoder = layers.by_ref().take(e).collect();
        let metadata = layers.by_ref().take(2).collect();
        let head = layers.collect();
        model.params = FusionParams { encoder, metadata, head };
        if model.params.tensors().iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(bad("non-finite parameter"));
        }
        Ok(Self {
            model,
            normalization: header.normalization,
            encoding: header.encoding,
            age_scaler: header.age_scaler,
            info: header.info,
        })
    }

    /// Writes through a temporary sibling and renames into place.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| bad(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, path).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
