use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassTaxonomy, LesionClass};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} true labels but {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("label {0} is not in taxonomy {1}")]
    ForeignLabel(String, String),
    #[error("cannot compute metrics on an empty confusion matrix")]
    Empty,
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// Rows are true classes, columns predicted classes, both in taxonomy order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub taxonomy: ClassTaxonomy,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn empty(taxonomy: &ClassTaxonomy) -> Self {
        let k = taxonomy.len();
        Self {
            taxonomy: taxonomy.clone(),
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_labels(
        truth: &[LesionClass],
        predicted: &[LesionClass],
        taxonomy: &ClassTaxonomy,
    ) -> Result<Self, EvalError> {
        let index = |c: &LesionClass| {
            taxonomy
                .index_of(*c)
                .ok_or_else(|| EvalError::ForeignLabel(c.to_string(), taxonomy.name().to_string()))
        };
        let t = truth.iter().map(index).collect::<Result<Vec<_>, _>>()?;
        let p = predicted.iter().map(index).collect::<Result<Vec<_>, _>>()?;
        Self::from_indices(&t, &p, taxonomy)
    }

    pub fn from_indices(truth: &[usize], predicted: &[usize], taxonomy: &ClassTaxonomy) -> Result<Self, EvalError> {
        if truth.len() != predicted.len() {
            return Err(EvalError::LengthMismatch(truth.len(), predicted.len()));
        }
        let k = taxonomy.len();
        let mut cm = Self::empty(taxonomy);
        for (&t, &p) in truth.iter().zip(predicted) {
            if let Some(&bad) = [t, p].iter().find(|&&i| i >= k) {
                return Err(EvalError::ForeignLabel(format!("index {bad}"), taxonomy.name().to_string()));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    fn validate(&self) -> Result<(), EvalError> {
        let k = self.taxonomy.len();
        if self.counts.len() != k || self.counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::Malformed(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: LesionClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub taxonomy: ClassTaxonomy,
    pub per_class: Vec<ClassMetrics>,
    pub overall_accuracy: f64,
    pub confusion_matrix: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_manifest: Option<String>,
}

impl EvaluationReport {
    pub fn macro_precision(&self) -> f64 {
        self.per_class.iter().map(|m| m.precision).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn macro_recall(&self) -> f64 {
        self.per_class.iter().map(|m| m.recall).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn metrics_for(&self, class: LesionClass) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == class)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_report(cm: &ConfusionMatrix) -> Result<EvaluationReport, EvalError> {
    cm.validate()?;
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let per_class = cm
        .taxonomy
        .classes()
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let tp = cm.counts[i][i];
            let precision = ratio(tp, cm.column_sum(i));
            let recall = ratio(tp, cm.row_sum(i));
            let f1 = if precision > 0.0 && recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class,
                precision,
                recall,
                f1,
                support: cm.row_sum(i),
            }
        })
        .collect();
    Ok(EvaluationReport {
        taxonomy: cm.taxonomy.clone(),
        per_class,
        overall_accuracy: ratio(cm.trace(), total),
        confusion_matrix: cm.clone(),
        run_manifest: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn render_report(report: &EvaluationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "Taxonomy: {}", report.taxonomy.name());
            let _ = writeln!(s, "{:<18}{:>10}{:>10}{:>10}{:>10}", "Classes", "Precision", "Recall", "F1-score", "Support");
            for m in &report.per_class {
                let _ = writeln!(
                    s,
                    "{:<18}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                    m.class.table_label(),
                    m.precision,
                    m.recall,
                    m.f1,
                    m.support
                );
            }
            let _ = writeln!(s, "{:<18}{:>10.4}", "Overall Accuracy", report.overall_accuracy);
            s
        }
    }
}

/// Parses the JSON form and checks it against its own confusion matrix.
pub fn parse_report_json(text: &str) -> Result<EvaluationReport, EvalError> {
    let report: EvaluationReport = serde_json::from_str(text).map_err(|e| EvalError::Malformed(e.to_string()))?;
    let cm = &report.confusion_matrix;
    if cm.taxonomy != report.taxonomy {
        return Err(EvalError::Malformed("matrix taxonomy differs from report taxonomy".into()));
    }
    let recomputed = compute_report(cm)?;
    if recomputed.per_class != report.per_class || recomputed.overall_accuracy != report.overall_accuracy {
        return Err(EvalError::Malformed("metrics disagree with the confusion matrix".into()));
    }
    Ok(report)
}
