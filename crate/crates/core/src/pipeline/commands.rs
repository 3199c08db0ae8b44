//! The pipeline stages. Stages talk to each other only through files under
//! the workdir.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::error::io_err;
use super::manifest::{AugmentedManifest, RunManifest, StageCounts, SubsetCounts};
use super::{PipelineConfig, PipelineError};
use crate::augmentation::{
    expand_training_set, materialize_augmented, oversample_minority, render_example, scale_to_unit, standardize,
    AugmentationPlan, NormalizationParams,
};
use crate::dataset::{
    ingest_images, load_image, load_metadata, resize_image, stratified_split, AgeScaler, DatasetError, ExampleId,
    LabeledExample, MetadataTable, PixelGrid, SplitManifest, Subset, METADATA_DIM, TARGET_SIZE,
};
use crate::evaluation::{compute_report, render_report, ConfusionMatrix, EvalError, EvaluationReport, ReportFormat};
use crate::model::{
    argmax, build_model, compute_class_weights, train, Checkpoint, CheckpointInfo, EpochRecord, FusionModel,
    MetadataEncoding, ModelError, Sample, SampleSource, TrainObserver, TrainingLog,
};

/// Fixed file layout under the workdir.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("split.manifest")
    }
    pub fn augmented_manifest(&self) -> PathBuf {
        self.root.join("augmented.manifest")
    }
    pub fn augmented_dir(&self) -> PathBuf {
        self.root.join("augmented")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("best.ckpt")
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn training_log(&self) -> PathBuf {
        self.logs().join("training.jsonl")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn dataset_stats(&self) -> PathBuf {
        self.reports().join("dataset_stats.json")
    }
    pub fn report_text(&self) -> PathBuf {
        self.reports().join("report.txt")
    }
    pub fn report_json(&self) -> PathBuf {
        self.reports().join("report.json")
    }
    pub fn run_manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path, hint: &str) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::Data(format!("{}: {e} ({hint})", path.display())))
}

fn pool(config: &PipelineConfig) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers())
        .build()
        .map_err(|e| PipelineError::Data(format!("worker pool: {e}")))
}

/// Loads an original and resizes it to the model input size.
pub fn load_base(example: &LabeledExample) -> Result<PixelGrid, DatasetError> {
    let image = load_image(&example.image_path)?;
    if image.width() == TARGET_SIZE && image.height() == TARGET_SIZE {
        Ok(image)
    } else {
        resize_image(&image, TARGET_SIZE, TARGET_SIZE)
    }
}

/// Per-class image counts before and after taxonomy filtering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub taxonomy: String,
    /// Every image folder found under the dataset root.
    pub folders_found: BTreeMap<String, usize>,
    /// Images kept after filtering to the taxonomy.
    pub per_class: BTreeMap<String, usize>,
    pub total_found: usize,
    pub total_kept: usize,
    pub empty_classes: Vec<String>,
    pub split: BTreeMap<String, SubsetCounts>,
    pub metadata_patients: usize,
    pub age_range: AgeScaler,
}

pub struct PrepareOutcome {
    pub manifest: SplitManifest,
    pub stats: DatasetStats,
}

fn split_counts(manifest: &SplitManifest) -> BTreeMap<String, SubsetCounts> {
    let mut out: BTreeMap<String, SubsetCounts> = BTreeMap::new();
    for ((class, subset), n) in manifest.per_class_counts() {
        let entry = out.entry(class.to_string()).or_default();
        match subset {
            Subset::Train => entry.train = n,
            Subset::Validation => entry.validation = n,
            Subset::Test => entry.test = n,
        }
    }
    out
}

/// Ingests the dataset, splits it and writes `split.manifest` plus
/// `reports/dataset_stats.json`.
pub fn cmd_prepare(config: &PipelineConfig) -> Result<PrepareOutcome, PipelineError> {
    let layout = Layout::new(&config.workdir);
    let taxonomy = config.taxonomy();
    let metadata = load_metadata(&config.metadata_path())?;
    let ingest = ingest_images(&config.dataset_root, &taxonomy, &metadata)?;
    let manifest = stratified_split(
        &ingest.examples,
        &taxonomy,
        config.split,
        config.seeds().split,
        config.grouping,
    )?
    .with_age_range(metadata.age_scaler);

    let per_class: BTreeMap<String, usize> =
        ingest.class_counts().into_iter().map(|(c, n)| (c.to_string(), n)).collect();
    let mut folders_found = per_class.clone();
    folders_found.extend(ingest.skipped.clone());
    let stats = DatasetStats {
        taxonomy: taxonomy.name().to_string(),
        total_found: folders_found.values().sum(),
        total_kept: ingest.examples.len(),
        folders_found,
        per_class,
        empty_classes: ingest.empty_classes.iter().map(|c| c.to_string()).collect(),
        split: split_counts(&manifest),
        metadata_patients: metadata.len(),
        age_range: metadata.age_scaler,
    };
    write_file(&layout.split_manifest(), manifest.to_text())?;
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n";
    write_file(&layout.dataset_stats(), json)?;
    log::info!(
        "prepare: {} images kept of {} found; split written to {}",
        stats.total_kept,
        stats.total_found,
        layout.split_manifest().display()
    );
    Ok(PrepareOutcome { manifest, stats })
}

fn read_split(config: &PipelineConfig) -> Result<SplitManifest, PipelineError> {
    let path = Layout::new(&config.workdir).split_manifest();
    let manifest = SplitManifest::parse(&read_file(&path, "run `prepare` first")?)?;
    if manifest.taxonomy != config.taxonomy() {
        return Err(PipelineError::Config(format!(
            "split manifest uses taxonomy {} but the config selects {}",
            manifest.taxonomy.name(),
            config.taxonomy().name()
        )));
    }
    if manifest.seed != config.seeds().split {
        return Err(PipelineError::Config(
            "split manifest was produced with a different seed; rerun `prepare`".into(),
        ));
    }
    Ok(manifest)
}

fn read_augmented(config: &PipelineConfig, split: &SplitManifest) -> Result<AugmentedManifest, PipelineError> {
    let path = Layout::new(&config.workdir).augmented_manifest();
    let manifest = AugmentedManifest::parse(&read_file(&path, "run `augment` first")?)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    if manifest.split_seed != split.seed || manifest.taxonomy != split.taxonomy {
        return Err(PipelineError::Config(
            "augmented manifest does not belong to the current split; rerun `augment`".into(),
        ));
    }
    Ok(manifest)
}

fn examples_in(config: &PipelineConfig, split: &SplitManifest, subset: Subset) -> Result<Vec<LabeledExample>, PipelineError> {
    split
        .ids_in(subset)
        .into_iter()
        .map(|id| LabeledExample::from_id(&config.dataset_root, id.as_str()).map_err(PipelineError::Data))
        .collect()
}

/// Expands and oversamples the training subset and writes
/// `augmented.manifest`; materializes images when configured.
pub fn cmd_augment(config: &PipelineConfig) -> Result<AugmentedManifest, PipelineError> {
    let layout = Layout::new(&config.workdir);
    let split = read_split(config)?;
    let originals = examples_in(config, &split, Subset::Train)?;
    let plan = config.plan();
    let expanded = if config.augmentation.enabled {
        expand_training_set(&originals, &split, &plan)?
    } else {
        originals
    };
    let seeds = config.seeds();
    let final_set = oversample_minority(&expanded, &split.taxonomy, config.oversample_threshold, seeds.oversample)?;
    let untouched = split
        .per_class_counts()
        .into_iter()
        .filter(|((_, s), _)| *s != Subset::Train)
        .collect();
    let manifest = AugmentedManifest {
        split_seed: split.seed,
        taxonomy: split.taxonomy.clone(),
        augmentation_enabled: config.augmentation.enabled,
        plan: plan.clone(),
        oversample_threshold: config.oversample_threshold,
        oversample_seed: seeds.oversample,
        untouched,
        examples: final_set.iter().map(|e| (e.id.clone(), e.label, e.origin)).collect(),
    };
    write_file(&layout.augmented_manifest(), manifest.to_text())?;
    if config.materialize {
        let dir = layout.augmented_dir();
        for class in split.taxonomy.classes() {
            let d = dir.join(class.folder_name());
            fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        }
        let n = materialize_augmented(&final_set, &plan, &load_base, &dir, config.workers())?;
        log::info!("augment: materialized {n} images under {}", dir.display());
    }
    log::info!("augment: {} training examples", manifest.examples.len());
    Ok(manifest)
}

/// Training examples held as shared 8-bit pixels; duplicates reference their
/// source's buffer and standardization happens on access.
pub struct ImageSamples {
    pixels: Vec<Arc<PixelGrid>>,
    metadata: Vec<[f64; METADATA_DIM]>,
    labels: Vec<usize>,
    normalization: NormalizationParams,
}

impl ImageSamples {
    /// Renders every distinct pixel source once. `materialized` points at the
    /// directory written by `augment` when images were saved to disk.
    pub fn build(
        examples: &[LabeledExample],
        plan: &AugmentationPlan,
        materialized: Option<&Path>,
        model: &FusionModel,
        metadata: &MetadataTable,
        age: &AgeScaler,
        normalization: NormalizationParams,
    ) -> Result<Self, PipelineError> {
        let mut sources: Vec<ExampleId> = examples.iter().map(|e| e.id.pixel_source()).collect();
        sources.sort();
        sources.dedup();
        let by_id: HashMap<&ExampleId, &LabeledExample> = examples.iter().map(|e| (&e.id, e)).collect();
        let rendered = sources
            .par_iter()
            .map(|id| -> Result<Arc<PixelGrid>, PipelineError> {
                let ex = by_id
                    .get(id)
                    .ok_or_else(|| PipelineError::Data(format!("{id} is duplicated but not listed")))?;
                let grid = match (materialized, id.augmentation_copy()) {
                    (Some(dir), Some(_)) => load_image(&dir.join(format!("{id}.png")))?,
                    _ => render_example(plan, &load_base(ex)?, id)?,
                };
                Ok(Arc::new(grid))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let index: HashMap<&ExampleId, usize> = sources.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut out = Self {
            pixels: Vec::with_capacity(examples.len()),
            metadata: Vec::with_capacity(examples.len()),
            labels: Vec::with_capacity(examples.len()),
            normalization,
        };
        for ex in examples {
            let record = metadata
                .get(&ex.patient_id)
                .ok_or_else(|| PipelineError::Data(format!("no metadata for patient {} ({})", ex.patient_id, ex.id)))?;
            let label = model.taxonomy.index_of(ex.label).ok_or_else(|| {
                PipelineError::Data(format!("{} has label {} outside the model taxonomy", ex.id, ex.label))
            })?;
            out.pixels.push(Arc::clone(&rendered[index[&ex.id.pixel_source()]]));
            out.metadata.push(record.to_vector_with(age));
            out.labels.push(label);
        }
        Ok(out)
    }
}

impl SampleSource for ImageSamples {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn sample(&self, index: usize) -> Result<Sample, ModelError> {
        let image = standardize(&scale_to_unit(&self.pixels[index]), &self.normalization)
            .map_err(|e| ModelError::Data(e.to_string()))?
            .to_chw();
        Ok(Sample {
            image,
            metadata: self.metadata[index],
            label: self.labels[index],
        })
    }
}

struct FileObserver {
    checkpoint: PathBuf,
    log: fs::File,
    normalization: NormalizationParams,
    age: AgeScaler,
}

impl TrainObserver for FileObserver {
    fn on_epoch_end(&mut self, record: &EpochRecord) -> Result<(), ModelError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.log, "{line}").map_err(|e| ModelError::Training(format!("training log: {e}")))?;
        self.log.flush().map_err(|e| ModelError::Training(format!("training log: {e}")))
    }

    fn on_checkpoint(&mut self, model: &FusionModel, info: &CheckpointInfo) -> Result<(), ModelError> {
        Checkpoint {
            model: model.clone(),
            normalization: self.normalization,
            encoding: MetadataEncoding::default(),
            age_scaler: Some(self.age),
            info: info.clone(),
        }
        .save(&self.checkpoint)
    }

    fn on_stage_start(&mut self, stage: u8, learning_rate: f64, trainable: crate::model::Trainable) {
        log::info!(
            "stage {stage}: learning rate {learning_rate:e}, encoder blocks from {} trainable",
            trainable.encoder_from
        );
    }
}

pub struct TrainSummary {
    pub log: TrainingLog,
    pub best: CheckpointInfo,
    pub checkpoint: PathBuf,
}

fn age_range(split: &SplitManifest, metadata: &MetadataTable) -> Result<AgeScaler, PipelineError> {
    let age = split.age_range.unwrap_or(metadata.age_scaler);
    if age != metadata.age_scaler {
        return Err(PipelineError::Data(
            "metadata table changed since `prepare` (age range differs); rerun `prepare`".into(),
        ));
    }
    Ok(age)
}

/// Trains from the manifests, writing `checkpoints/best.ckpt` on every
/// validation improvement and one log line per epoch.
pub fn cmd_train(config: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    let layout = Layout::new(&config.workdir);
    let split = read_split(config)?;
    let augmented = read_augmented(config, &split)?;
    let metadata = load_metadata(&config.metadata_path())?;
    let age = age_range(&split, &metadata)?;
    let seeds = config.seeds();
    let model = build_model(
        &config.model.encoder,
        &split.taxonomy,
        METADATA_DIM,
        &config.model.fusion,
        seeds.init,
    )?;
    let train_examples: Vec<LabeledExample> = augmented
        .examples
        .iter()
        .map(|(id, _, _)| LabeledExample::from_id(&config.dataset_root, id.as_str()).map_err(PipelineError::Data))
        .collect::<Result<_, _>>()?;
    let val_examples = examples_in(config, &split, Subset::Validation)?;
    let materialized = config.materialize.then(|| layout.augmented_dir());

    let pool = pool(config)?;
    let (train_set, val_set) = pool.install(|| -> Result<_, PipelineError> {
        let t = ImageSamples::build(
            &train_examples,
            &augmented.plan,
            materialized.as_deref(),
            &model,
            &metadata,
            &age,
            config.normalization,
        )?;
        let v = ImageSamples::build(
            &val_examples,
            &augmented.plan,
            None,
            &model,
            &metadata,
            &age,
            config.normalization,
        )?;
        Ok((t, v))
    })?;

    let counts: BTreeMap<_, _> = augmented.stage_counts().into_iter().map(|(c, s)| (c, s.oversampled)).collect();
    let weights = compute_class_weights(&split.taxonomy, &counts)?;
    fs::create_dir_all(layout.checkpoints()).map_err(|e| io_err(&layout.checkpoints(), e))?;
    fs::create_dir_all(layout.logs()).map_err(|e| io_err(&layout.logs(), e))?;
    let log_file = fs::File::create(layout.training_log()).map_err(|e| io_err(&layout.training_log(), e))?;
    let mut observer = FileObserver {
        checkpoint: layout.best_checkpoint(),
        log: log_file,
        normalization: config.normalization,
        age,
    };
    let outcome = pool.install(|| {
        train(
            model,
            &config.training,
            &train_set,
            &val_set,
            &weights,
            seeds.train,
            &mut observer,
        )
    });
    let outcome = outcome.map_err(|e| {
        if layout.best_checkpoint().is_file() {
            log::error!("training aborted; last best checkpoint kept at {}", layout.best_checkpoint().display());
        }
        PipelineError::from(e)
    })?;
    log::info!(
        "train: best validation accuracy {:.4} at stage {} epoch {}",
        outcome.best.val_accuracy,
        outcome.best.stage,
        outcome.best.epoch
    );
    Ok(TrainSummary {
        log: outcome.log,
        best: outcome.best,
        checkpoint: layout.best_checkpoint(),
    })
}

/// Runs the best checkpoint over the test subset and writes text and JSON
/// reports.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<EvaluationReport, PipelineError> {
    let layout = Layout::new(&config.workdir);
    let checkpoint = Checkpoint::load(&layout.best_checkpoint())?;
    let taxonomy = config.taxonomy();
    if checkpoint.model.taxonomy != taxonomy {
        return Err(PipelineError::Config(format!(
            "taxonomy mismatch: checkpoint was trained on {} but the config selects {}",
            checkpoint.model.taxonomy.name(),
            taxonomy.name()
        )));
    }
    let split = read_split(config)?;
    let test = examples_in(config, &split, Subset::Test)?;
    if test.is_empty() {
        return Err(EvalError::Empty.into());
    }
    let metadata = load_metadata(&config.metadata_path())?;
    let age = checkpoint.age_scaler.unwrap_or(metadata.age_scaler);
    let model = &checkpoint.model;
    let samples = pool(config)?.install(|| {
        ImageSamples::build(
            &test,
            &AugmentationPlan::default(),
            None,
            model,
            &metadata,
            &age,
            checkpoint.normalization,
        )
    })?;
    let predictions = (0..samples.len())
        .into_par_iter()
        .map(|i| -> Result<(usize, usize), PipelineError> {
            let s = samples.sample(i)?;
            Ok((s.label, argmax(&model.predict(&s.image, &s.metadata)?)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (truth, predicted): (Vec<usize>, Vec<usize>) = predictions.into_iter().unzip();
    let cm = ConfusionMatrix::from_indices(&truth, &predicted, &taxonomy)?;
    let mut report = compute_report(&cm)?;
    report.run_manifest = Some("run_manifest.json".into());
    write_file(&layout.report_text(), render_report(&report, ReportFormat::Text))?;
    write_file(&layout.report_json(), render_report(&report, ReportFormat::Json))?;
    log::info!("evaluate: overall accuracy {:.4} on {} test images", report.overall_accuracy, truth.len());
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    Augment,
    Train,
    Evaluate,
}

/// Rebuilds `run_manifest.json` from whatever artifacts exist, keeping
/// earlier timings and recording `elapsed` for `stage`.
pub fn refresh_run_manifest(config: &PipelineConfig, stage: Stage, elapsed: f64) -> Result<RunManifest, PipelineError> {
    let layout = Layout::new(&config.workdir);
    let mut timing = fs::read_to_string(layout.run_manifest())
        .ok()
        .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
        .map(|m| m.timing)
        .unwrap_or_default();
    let slot = match stage {
        Stage::Prepare => &mut timing.prepare,
        Stage::Augment => &mut timing.augment,
        Stage::Train => &mut timing.train,
        Stage::Evaluate => &mut timing.evaluate,
    };
    *slot = Some(elapsed);

    let mut split_counts_map = BTreeMap::new();
    let mut training_counts: BTreeMap<String, StageCounts> = BTreeMap::new();
    let mut artifacts = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(layout.split_manifest()) {
        if let Ok(split) = SplitManifest::parse(&text) {
            split_counts_map = split_counts(&split);
        }
        artifacts.insert("split_manifest".to_string(), "split.manifest".to_string());
    }
    if let Ok(text) = fs::read_to_string(layout.augmented_manifest()) {
        if let Ok(aug) = AugmentedManifest::parse(&text) {
            training_counts = aug.stage_counts().into_iter().map(|(c, s)| (c.to_string(), s)).collect();
        }
        artifacts.insert("augmented_manifest".to_string(), "augmented.manifest".to_string());
    }
    for (key, path) in [
        ("checkpoint", layout.best_checkpoint()),
        ("training_log", layout.training_log()),
        ("dataset_stats", layout.dataset_stats()),
        ("report_text", layout.report_text()),
        ("report_json", layout.report_json()),
    ] {
        if path.is_file() {
            let rel = path.strip_prefix(&layout.root).unwrap_or(&path);
            artifacts.insert(key.to_string(), rel.display().to_string());
        }
    }
    let mut echo = config.clone();
    echo.augmentation.transforms = config.plan().transforms;
    let manifest = RunManifest {
        config: serde_json::to_value(&echo).expect("config serializes"),
        seeds: config.seeds(),
        plan: config.plan(),
        split_counts: split_counts_map,
        training_counts,
        artifacts,
        timing,
    };
    write_file(
        &layout.run_manifest(),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(manifest)
}

pub struct RunAllOutcome {
    pub report: EvaluationReport,
    pub training: TrainSummary,
    pub manifest: RunManifest,
}

fn timed<T>(
    config: &PipelineConfig,
    stage: Stage,
    f: impl FnOnce(&PipelineConfig) -> Result<T, PipelineError>,
) -> Result<(T, RunManifest), PipelineError> {
    let start = Instant::now();
    let out = f(config)?;
    let manifest = refresh_run_manifest(config, stage, start.elapsed().as_secs_f64())?;
    Ok((out, manifest))
}

/// Runs one stage and refreshes the run manifest.
pub fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<RunManifest, PipelineError> {
    let manifest = match stage {
        Stage::Prepare => timed(config, stage, cmd_prepare)?.1,
        Stage::Augment => timed(config, stage, cmd_augment)?.1,
        Stage::Train => timed(config, stage, cmd_train)?.1,
        Stage::Evaluate => timed(config, stage, cmd_evaluate)?.1,
    };
    Ok(manifest)
}

/// All four stages in order.
pub fn run_all(config: &PipelineConfig) -> Result<RunAllOutcome, PipelineError> {
    timed(config, Stage::Prepare, cmd_prepare)?;
    timed(config, Stage::Augment, cmd_augment)?;
    let (training, _) = timed(config, Stage::Train, cmd_train)?;
    let (report, manifest) = timed(config, Stage::Evaluate, cmd_evaluate)?;
    Ok(RunAllOutcome {
        report,
        training,
        manifest,
    })
}

