//! The TOML file that drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::augmentation::{AugmentationPlan, NormalizationParams, TransformSpec, OVERSAMPLE_THRESHOLD};
use crate::dataset::{ClassTaxonomy, Grouping, SplitRatios, TaxonomyKind, METADATA_DIM, TARGET_SIZE};
use crate::model::{EncoderSpec, FusionConfig, FusionModel, TrainingSchedule};
use crate::seed::derive_named;

fn default_transforms() -> Vec<TransformSpec> {
    AugmentationPlan::default().transforms
}

fn default_copies() -> u32 {
    5
}

fn yes() -> bool {
    true
}

/// Augmentation recipe as written in the config. The plan seed is always
/// derived from the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_copies")]
    pub copies_per_image: u32,
    #[serde(default = "default_transforms")]
    pub transforms: Vec<TransformSpec>,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        Self {
            enabled: true,
            copies_per_image: default_copies(),
            transforms: default_transforms(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "EncoderSpec::efficientnet_v2_b1")]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub fusion: FusionConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::efficientnet_v2_b1(),
            fusion: FusionConfig::default(),
        }
    }
}

/// Settings swapped in by `--desk-scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskScale {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub oversample_threshold: usize,
    pub encoder: EncoderSpec,
}

impl Default for DeskScale {
    fn default() -> Self {
        Self {
            stage1_epochs: 2,
            stage2_epochs: 2,
            oversample_threshold: 48,
            encoder: EncoderSpec::desk_scale(),
        }
    }
}

fn default_threshold() -> usize {
    OVERSAMPLE_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    /// Defaults to `<dataset_root>/metadata.csv`.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    pub taxonomy: TaxonomyKind,
    pub workdir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub augmentation: AugmentationSection,
    #[serde(default = "default_threshold")]
    pub oversample_threshold: usize,
    /// Write augmented images under `<workdir>/augmented/` and train from them.
    #[serde(default)]
    pub materialize: bool,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSchedule,
    #[serde(default)]
    pub normalization: NormalizationParams,
    #[serde(default)]
    pub desk_scale: DeskScale,
    /// Set by `--desk-scale` or in the file.
    #[serde(default)]
    pub use_desk_scale: bool,
}

/// Seeds for every random consumer, derived from the master seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub split: u64,
    pub augment: u64,
    pub oversample: u64,
    pub init: u64,
    pub train: u64,
}

impl ResolvedSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            split: derive_named(master, "split"),
            augment: derive_named(master, "augment"),
            oversample: derive_named(master, "oversample"),
            init: derive_named(master, "init"),
            train: derive_named(master, "train"),
        }
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workdir: Option<PathBuf>,
    pub desk_scale: bool,
}

fn cfg(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| cfg(e.to_string()))?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    /// Reads, applies overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = Self::from_toml(&text, base)?;
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.dataset_root = join(&self.dataset_root);
        self.workdir = join(&self.workdir);
        self.metadata = Some(match &self.metadata {
            Some(m) => join(m),
            None => self.dataset_root.join("metadata.csv"),
        });
        for spec in [&mut self.model.encoder, &mut self.desk_scale.encoder] {
            if let Some(w) = &spec.weights {
                spec.weights = Some(join(w));
            }
        }
    }

    /// Applies overrides; desk-scale settings replace the encoder, epoch
    /// counts and oversampling threshold.
    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(w) = &overrides.workdir {
            self.workdir = w.clone();
        }
        if overrides.desk_scale {
            self.use_desk_scale = true;
        }
        if self.use_desk_scale {
            let d = self.desk_scale.clone();
            self.model.encoder = d.encoder;
            self.training.stage1.epochs = d.stage1_epochs;
            self.training.stage2.epochs = d.stage2_epochs;
            self.oversample_threshold = d.oversample_threshold;
        }
    }

    pub fn metadata_path(&self) -> PathBuf {
        self.metadata.clone().unwrap_or_else(|| self.dataset_root.join("metadata.csv"))
    }

    pub fn taxonomy(&self) -> ClassTaxonomy {
        self.taxonomy.taxonomy()
    }

    pub fn seeds(&self) -> ResolvedSeeds {
        ResolvedSeeds::from_master(self.seed)
    }

    pub fn plan(&self) -> AugmentationPlan {
        AugmentationPlan {
            transforms: self.augmentation.transforms.clone(),
            copies_per_image: self.augmentation.copies_per_image,
            seed: self.seeds().augment,
        }
    }

    /// Checks every invariant before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.dataset_root.is_dir() {
            return Err(cfg(format!("dataset root {} is not a directory", self.dataset_root.display())));
        }
        let metadata = self.metadata_path();
        if !metadata.is_file() {
            return Err(cfg(format!("metadata table {} does not exist", metadata.display())));
        }
        self.split.validate()?;
        if self.oversample_threshold < 1 {
            return Err(cfg("oversample_threshold must be at least 1"));
        }
        self.plan().validate()?;
        self.normalization.validate()?;
        self.training.validate()?;
        if self.model.fusion.input_size != TARGET_SIZE as usize {
            return Err(cfg(format!(
                "model input_size must be {TARGET_SIZE} to match the preprocessing resize"
            )));
        }
        FusionModel::layout(&self.model.encoder, &self.taxonomy(), METADATA_DIM, &self.model.fusion)?;
        if let Some(w) = self.model.encoder.weights.as_ref().filter(|_| self.model.encoder.pretrained) {
            if !w.is_file() {
                return Err(cfg(format!("encoder weights {} do not exist", w.display())));
            }
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }
}
