//! Softmax, class-weighted cross-entropy and balanced class weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{ClassTaxonomy, LesionClass};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Per-class loss weights, indexed in taxonomy order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        Self { weights: vec![1.0; k] }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.weights[index]
    }
}

/// Balanced weights `N / (K * n_c)` over the classes of `taxonomy`.
pub fn compute_class_weights(
    taxonomy: &ClassTaxonomy,
    counts: &BTreeMap<LesionClass, usize>,
) -> Result<ClassWeights, ModelError> {
    let k = taxonomy.len();
    let mut per_class = Vec::with_capacity(k);
    for class in taxonomy.classes() {
        let n = counts.get(class).copied().unwrap_or(0);
        if n == 0 {
            return Err(ModelError::ClassWeights(format!("class {class} has no training examples")));
        }
        per_class.push(n);
    }
    if let Some(extra) = counts.keys().find(|c| !taxonomy.contains(**c)) {
        return Err(ModelError::ClassWeights(format!("class {extra} is not in taxonomy {}", taxonomy.name())));
    }
    let total: usize = per_class.iter().sum();
    Ok(ClassWeights {
        weights: per_class.iter().map(|&n| total as f64 / (k as f64 * n as f64)).collect(),
    })
}

fn check_row(logits: &[f64], label: usize, k: usize) -> Result<(), ModelError> {
    if logits.len() != k {
        return Err(ModelError::Shape(format!("logit row has {} entries, expected {k}", logits.len())));
    }
    if label >= k {
        return Err(ModelError::Label(format!("label index {label} outside 0..{k}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Numeric("non-finite logits".into()));
    }
    Ok(())
}

/// Mean weighted cross-entropy over a batch of logit rows.
pub fn weighted_cross_entropy(
    logits: &[Vec<f64>],
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<f64, ModelError> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(ModelError::Shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let k = weights.weights.len();
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        check_row(row, y, k)?;
        total -= weights.get(y) * log_softmax(row)[y];
    }
    Ok(total / logits.len() as f64)
}

/// Gradient of one row's weighted loss term with respect to its logits,
/// scaled by `1 / batch`.
pub fn cross_entropy_grad(
    logits: &[f64],
    label: usize,
    weights: &ClassWeights,
    batch: usize,
) -> Result<(f64, Vec<f64>), ModelError> {
    let k = weights.weights.len();
    check_row(logits, label, k)?;
    let w = weights.get(label);
    let scale = w / batch as f64;
    let mut probs = softmax(logits);
    let loss = -w * log_softmax(logits)[label];
    probs[label] -= 1.0;
    for p in probs.iter_mut() {
        *p *= scale;
    }
    Ok((loss, probs))
}
