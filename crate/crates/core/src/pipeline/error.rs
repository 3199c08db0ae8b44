use thiserror::Error;

use crate::augmentation::AugmentError;
use crate::dataset::DatasetError;
use crate::evaluation::EvalError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
}

impl PipelineError {
    /// 1 validation, 2 data, 3 training or numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Training(_) => 3,
        }
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::SplitConfig(_) | DatasetError::Taxonomy(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<AugmentError> for PipelineError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Plan(_) | AugmentError::Param(_) => PipelineError::Config(e.to_string()),
            AugmentError::Dataset(d) => d.into(),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Build(_) => PipelineError::Config(e.to_string()),
            ModelError::Checkpoint(_) | ModelError::Data(_) | ModelError::Shape(_) | ModelError::Label(_) => {
                PipelineError::Data(e.to_string())
            }
            _ => PipelineError::Training(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}
