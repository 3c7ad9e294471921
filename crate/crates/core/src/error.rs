use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error in record {record}: {message}")]
    Format { record: usize, message: String },

    #[error("unsupported NPY header {header:?}: {message}")]
    NpyHeader { header: String, message: String },

    #[error("label {label} of image {index} is not below class count {class_count}")]
    Label {
        index: usize,
        label: usize,
        class_count: usize,
    },

    #[error("image {index} has no label")]
    MissingLabel { index: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("shape error at image {index}: {message}")]
    ShapeAt { index: usize, message: String },

    #[error("class mismatch: {0}")]
    Class(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("model failed on image {index}: {source}")]
    Model {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("probe {kind} (radius {radius:?}) failed on image {index}: {source}")]
    Probe {
        kind: String,
        radius: Option<f64>,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset {name}: {source}")]
    Dataset {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
