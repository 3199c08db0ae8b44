//! Confusion matrices, per-class metrics and report rendering.

mod report;

pub use report::{
    compute_report, parse_report_json, render_report, ClassMetrics, ConfusionMatrix, EvalError, EvaluationReport,
    ReportFormat,
};
