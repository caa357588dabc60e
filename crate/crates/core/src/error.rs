use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed WAV data: {0}")]
    Format(String),

    #[error("unsupported WAV {field}: {value}")]
    UnsupportedFormat { field: &'static str, value: String },

    #[error("input too short: {len} samples, need at least {needed}")]
    InputTooShort { len: usize, needed: usize },

    #[error(
        "input of {rows}x{cols} is too small for {n_stages} pyramid stages \
         (need at least {min}x{min}); try n_stages <= {suggested}"
    )]
    StageUnderflow {
        rows: usize,
        cols: usize,
        n_stages: usize,
        min: usize,
        suggested: usize,
    },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite gradient at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("fitting diverged at epoch {epoch} (stage {stage}): loss is not finite")]
    Divergence { epoch: usize, stage: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("dataset row {row}: {message}")]
    Dataset { row: usize, message: String },

    #[error("duplicate clip_id {clip_id:?} at row {row}")]
    DuplicateClip { row: usize, clip_id: String },

    #[error("too many failed records: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("params file: {0}")]
    ParamsFile(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::Divergence { .. } | Error::DegenerateData(_)
        )
    }
}
