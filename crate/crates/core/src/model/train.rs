//! Two-stage training: frozen-backbone feature extraction, then fine-tuning
//! of the top encoder blocks at a lower learning rate.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::callbacks::{EarlyStopping, ReduceLrOnPlateau};
use super::checkpoint::CheckpointInfo;
use super::fusion::{argmax, FusionModel, FusionParams, Trainable};
use super::loss::{cross_entropy_grad, ClassWeights};
use super::ModelError;
use crate::dataset::METADATA_DIM;
use crate::evaluation::{compute_report, ConfusionMatrix};
use crate::seed::{derive_seed, rng_from};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of encoder blocks, counted from the top, that train.
    pub unfreeze_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CallbackConfig {
    pub early_stopping_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_learning_rate: f64,
}

impl Default for CallbackConfig {
    fn default() -> Self {
        Self {
            early_stopping_patience: 5,
            plateau_factor: 0.5,
            plateau_patience: 3,
            min_learning_rate: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSchedule {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub batch_size: usize,
    pub callbacks: CallbackConfig,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            stage1: StageConfig {
                learning_rate: 1e-3,
                epochs: 15,
                unfreeze_fraction: 0.0,
            },
            stage2: StageConfig {
                learning_rate: 1e-5,
                epochs: 10,
                unfreeze_fraction: 0.3,
            },
            batch_size: 32,
            callbacks: CallbackConfig::default(),
        }
    }
}

impl TrainingSchedule {
    pub fn total_epochs(&self) -> usize {
        self.stage1.epochs + self.stage2.epochs
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Training(m));
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
                return err(format!("{name} learning rate must be positive"));
            }
            if !(0.0..=1.0).contains(&s.unfreeze_fraction) {
                return err(format!("{name} unfreeze_fraction must be in [0,1]"));
            }
        }
        if self.stage1.learning_rate <= self.stage2.learning_rate {
            return err("stage1 learning rate must exceed stage2 learning rate".into());
        }
        if self.batch_size == 0 {
            return err("batch size must be positive".into());
        }
        let c = &self.callbacks;
        if !(c.plateau_factor > 0.0 && c.plateau_factor < 1.0) {
            return err("plateau factor must be in (0,1)".into());
        }
        if c.early_stopping_patience == 0 || c.plateau_patience == 0 {
            return err("callback patience must be positive".into());
        }
        if !(c.min_learning_rate.is_finite() && c.min_learning_rate >= 0.0) {
            return err("min learning rate must be non-negative".into());
        }
        Ok(())
    }
}

/// One standardized CHW image with its metadata vector and class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Vec<f64>,
    pub metadata: [f64; METADATA_DIM],
    pub label: usize,
}

/// Random-access example stream. Implementations must be deterministic.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<Sample, ModelError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<Sample, ModelError> {
        Ok(self[index].clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    /// 1-based within the stage.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_precision: f64,
    pub train_recall: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub improved: bool,
    pub early_stop: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Parses a log, checking stage order and epoch numbering.
    pub fn parse_jsonl(text: &str) -> Result<Self, ModelError> {
        let mut records: Vec<EpochRecord> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: EpochRecord = serde_json::from_str(line)
                .map_err(|e| ModelError::Training(format!("log line {}: {e}", i + 1)))?;
            let expected_epoch = match records.last() {
                Some(prev) if prev.stage == r.stage => prev.epoch + 1,
                Some(prev) if prev.stage > r.stage => 0,
                _ => 1,
            };
            if !(1..=2).contains(&r.stage) || r.epoch != expected_epoch {
                return Err(ModelError::Training(format!(
                    "log line {}: unexpected stage {} epoch {}",
                    i + 1,
                    r.stage,
                    r.epoch
                )));
            }
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_accuracy).reduce(f64::max)
    }
}

/// Hooks into the training loop; every method defaults to a no-op.
pub trait TrainObserver {
    fn on_stage_start(&mut self, _stage: u8, _learning_rate: f64, _trainable: Trainable) {}
    fn on_epoch_end(&mut self, _record: &EpochRecord) -> Result<(), ModelError> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _model: &FusionModel, _info: &CheckpointInfo) -> Result<(), ModelError> {
        Ok(())
    }
    fn on_stage_end(&mut self, _stage: u8, _model: &FusionModel) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FusionModel,
    pub log: TrainingLog,
    pub best: CheckpointInfo,
}

struct PassMetrics {
    loss: f64,
    accuracy: f64,
    precision: f64,
    recall: f64,
}

fn metrics(model: &FusionModel, loss: f64, truth: &[usize], predicted: &[usize]) -> Result<PassMetrics, ModelError> {
    let cm = ConfusionMatrix::from_indices(truth, predicted, &model.taxonomy)
        .map_err(|e| ModelError::Training(e.to_string()))?;
    let report = compute_report(&cm).map_err(|e| ModelError::Training(e.to_string()))?;
    Ok(PassMetrics {
        loss,
        accuracy: report.overall_accuracy,
        precision: report.macro_precision(),
        recall: report.macro_recall(),
    })
}

fn check_label(model: &FusionModel, s: &Sample) -> Result<(), ModelError> {
    if s.label >= model.num_classes() {
        return Err(ModelError::Label(format!(
            "label index {} outside taxonomy {}",
            s.label,
            model.taxonomy.name()
        )));
    }
    Ok(())
}

/// Inference-mode pass: unweighted mean cross-entropy plus metrics.
fn evaluate(model: &FusionModel, source: &dyn SampleSource) -> Result<PassMetrics, ModelError> {
    let rows = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let s = source.sample(i)?;
            check_label(model, &s)?;
            let logits = model.logits(&s.image, &s.metadata)?;
            let (loss, _) = cross_entropy_grad(&logits, s.label, &ClassWeights::uniform(model.num_classes()), 1)?;
            Ok((loss, s.label, argmax(&logits)))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let truth: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let predicted: Vec<usize> = rows.iter().map(|r| r.2).collect();
    metrics(model, loss, &truth, &predicted)
}

struct StageContext<'a> {
    schedule: &'a TrainingSchedule,
    train: &'a dyn SampleSource,
    val: &'a dyn SampleSource,
    weights: &'a ClassWeights,
    seed: u64,
}

struct Best {
    val_accuracy: f64,
    params: FusionParams,
    info: CheckpointInfo,
}

fn run_stage(
    ctx: &StageContext<'_>,
    model: &mut FusionModel,
    stage: u8,
    config: &StageConfig,
    best: &mut Option<Best>,
    log: &mut TrainingLog,
    observer: &mut dyn TrainObserver,
) -> Result<(), ModelError> {
    let trainable = if config.unfreeze_fraction > 0.0 {
        model.partially_unfrozen(config.unfreeze_fraction)
    } else {
        model.frozen_backbone()
    };
    let mask = model.params.trainable_mask(trainable);
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let cb = &ctx.schedule.callbacks;
    let mut stopper = EarlyStopping::new(cb.early_stopping_patience);
    let mut plateau = ReduceLrOnPlateau::new(cb.plateau_factor, cb.plateau_patience, cb.min_learning_rate);
    observer.on_stage_start(stage, adam.learning_rate, trainable);

    let n = ctx.train.len();
    let batch_size = ctx.schedule.batch_size;
    for epoch in 1..=config.epochs {
        let epoch_tag = [[stage].as_slice(), &(epoch as u64).to_le_bytes()].concat();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(derive_seed(ctx.seed, &[b"shuffle", &epoch_tag])));

        let mut weighted_loss = 0.0;
        let mut truth = Vec::with_capacity(n);
        let mut predicted = Vec::with_capacity(n);
        for (b, batch) in order.chunks(batch_size).enumerate() {
            let len = batch.len();
            let per_sample = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let s = ctx.train.sample(idx)?;
                    check_label(model, &s)?;
                    let position = (b * batch_size + j) as u64;
                    let mut rng =
                        rng_from(derive_seed(ctx.seed, &[b"dropout", &epoch_tag, &position.to_le_bytes()]));
                    let trace = model.forward(&s.image, &s.metadata, Some(&mut rng))?;
                    let (loss, dlogits) = cross_entropy_grad(&trace.logits, s.label, ctx.weights, len)?;
                    let mut grads = model.params.zeros_like();
                    model.backward(&trace, &dlogits, &mut grads, trainable);
                    Ok((loss, s.label, argmax(&trace.logits), grads))
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            let mut grads = model.params.zeros_like();
            for (loss, label, pred, g) in &per_sample {
                weighted_loss += loss;
                truth.push(*label);
                predicted.push(*pred);
                grads.add_assign(g);
            }
            if !weighted_loss.is_finite() {
                return Err(ModelError::Numeric(format!("training loss diverged in stage {stage} epoch {epoch}")));
            }
            adam.step(&mut model.params, &grads, &mask);
        }
        let train = metrics(model, weighted_loss / n as f64, &truth, &predicted)?;
        let val = evaluate(model, ctx.val)?;
        if !val.loss.is_finite() || !val.accuracy.is_finite() {
            return Err(ModelError::Numeric(format!(
                "validation metrics are not finite in stage {stage} epoch {epoch} (loss {})",
                val.loss
            )));
        }

        let improved = best.as_ref().is_none_or(|b| val.accuracy > b.val_accuracy);
        if improved {
            let info = CheckpointInfo {
                stage,
                epoch,
                val_accuracy: val.accuracy,
            };
            observer.on_checkpoint(model, &info)?;
            *best = Some(Best {
                val_accuracy: val.accuracy,
                params: model.params.clone(),
                info,
            });
        }
        let stop = stopper.update(val.accuracy);
        let record = EpochRecord {
            stage,
            epoch,
            learning_rate: adam.learning_rate,
            train_loss: train.loss,
            train_accuracy: train.accuracy,
            train_precision: train.precision,
            train_recall: train.recall,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_precision: val.precision,
            val_recall: val.recall,
            improved,
            early_stop: stop,
        };
        log::info!(
            "stage {stage} epoch {epoch}: lr {:.2e} loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            record.learning_rate,
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        observer.on_epoch_end(&record)?;
        log.records.push(record);
        if stop {
            break;
        }
        adam.learning_rate = plateau.update(val.accuracy, adam.learning_rate);
    }
    observer.on_stage_end(stage, model);
    Ok(())
}

/// Runs both stages and returns the parameters with the best validation
/// accuracy seen in either stage.
pub fn train(
    model: FusionModel,
    schedule: &TrainingSchedule,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    weights: &ClassWeights,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, ModelError> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(ModelError::Training("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(ModelError::Training("validation set is empty".into()));
    }
    if weights.weights.len() != model.num_classes() {
        return Err(ModelError::ClassWeights(format!(
            "{} class weights for {} classes",
            weights.weights.len(),
            model.num_classes()
        )));
    }
    if weights.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(ModelError::ClassWeights("class weights must be positive".into()));
    }
    let ctx = StageContext {
        schedule,
        train,
        val,
        weights,
        seed,
    };
    let mut model = model;
    let mut best = None;
    let mut log = TrainingLog::default();
    run_stage(&ctx, &mut model, 1, &schedule.stage1, &mut best, &mut log, observer)?;
    run_stage(&ctx, &mut model, 2, &schedule.stage2, &mut best, &mut log, observer)?;
    let best_info = match best {
        Some(b) => {
            model.params = b.params;
            b.info
        }
        None => CheckpointInfo::default(),
    };
    Ok(TrainOutcome {
        model,
        log,
        best: best_info,
    })
}
