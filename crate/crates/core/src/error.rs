use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: usize, reason: String },

    #[error("point is behind camera {camera} (depth {depth})")]
    BehindCamera { camera: usize, depth: f64 },

    #[error("insufficient views: need at least 2, got {0}")]
    InsufficientViews(usize),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("validation error at {location}: {reason}")]
    Validation { location: String, reason: String },

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("instance too large: more than {cap} search states")]
    InstanceTooLarge { cap: u64 },

    #[error("sequence mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            location: location.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
