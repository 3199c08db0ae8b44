use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model build error: {0}")]
    Build(String),
    #[error("input shape mismatch: {0}")]
    Shape(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("class weight error: {0}")]
    ClassWeights(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("data error: {0}")]
    Data(String),
}
