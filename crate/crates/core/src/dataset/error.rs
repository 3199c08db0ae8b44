use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("metadata schema error: missing required column `{0}`")]
    MissingColumn(String),
    #[error("metadata row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("duplicate patient ids in metadata: {}", .0.join(", "))]
    DuplicatePatients(Vec<String>),
    #[error("unresolved patient id for image(s): {}", display_paths(.0))]
    UnresolvedPatient(Vec<PathBuf>),
    #[error("cannot read image {path}: {message}")]
    UnreadableImage { path: PathBuf, message: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("split config error: {0}")]
    SplitConfig(String),
    #[error("manifest parse error at line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate example id `{0}`")]
    DuplicateExample(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}
