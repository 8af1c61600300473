use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid material field: {0}")]
    Material(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not positive definite (pivot {pivot}: {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("requested {requested} eigenvalues on the {side} side, only {available} available")]
    CountExceeded {
        side: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("eigensolver: {0}")]
    Eigen(String),
    #[error("cell problem: {0}")]
    Cell(String),
    #[error("limit problem: {0}")]
    Limit(String),
    #[error("two-scale pairing: {0}")]
    Pairing(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than by a failed solve.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Geometry(_)
                | Error::Material(_)
                | Error::Config(_)
                | Error::Parse(_)
                | Error::Budget(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
