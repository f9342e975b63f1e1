use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("sample {index} is the zero vector and cannot be normalized to unit length")]
    ZeroVector { index: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{module}: ill-conditioned system (least eigenvalue {lambda_min:e}): {detail}")]
    Conditioning {
        module: &'static str,
        lambda_min: f64,
        detail: String,
    },

    #[error("cannot remove a point from a single-point training set")]
    DegenerateRemoval,

    #[error("index {index} out of range for {len} points")]
    Index { index: usize, len: usize },

    #[error("training diverged at epoch {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Conditioning { .. } | Error::Divergence { .. } | Error::DegenerateRemoval
        )
    }

    /// Best-effort name of the module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::EmptyDataset(_) | Error::ZeroVector { .. } => "data",
            Error::Domain(_) => "kernel",
            Error::Conditioning { module, .. } => module,
            Error::DegenerateRemoval => "ridge",
            Error::Divergence { .. } | Error::State(_) => "network",
            Error::DegenerateInput(_) => "stats",
            Error::Parameter(_) | Error::Shape { .. } | Error::Index { .. } => "core",
            Error::Io(_) | Error::Json(_) => "io",
        }
    }
}

pub(crate) fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        Err(Error::Index { index, len })
    } else {
        Ok(())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::Shape {
            what,
            expected,
            found,
        })
    } else {
        Ok(())
    }
}
