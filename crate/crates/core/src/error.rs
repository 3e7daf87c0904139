use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("roi out of bounds: {edge} edge at {value} exceeds limit {limit}")]
    RoiBounds {
        edge: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("solver diverged at iteration {iteration}: objective {objective:.4e} exceeds 10x the minimum {minimum:.4e}; try a smaller step size")]
    Divergence {
        iteration: usize,
        objective: f64,
        minimum: f64,
    },

    #[error("run for strength {strength} failed: {source}")]
    PathEntry {
        strength: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("cancelled")]
    Cancelled,

    #[error("unknown phantom {0:?}")]
    UnknownPhantom(String),

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
