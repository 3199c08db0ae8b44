use thiserror::Error;

use crate::dataset::DatasetError;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("augmentation plan error: {0}")]
    Plan(String),
    #[error("normalisation parameter error: {0}")]
    Param(String),
    #[error("expansion contract violated: {0}")]
    Contract(String),
    #[error("oversampling error: {0}")]
    Oversample(String),
    #[error("worker pool error: {0}")]
    Pool(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
