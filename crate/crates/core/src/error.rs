use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The simulated setup cannot produce usable data (e.g. the beam misses the wires).
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Quadrature, linear solve or fit iteration failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The measured profile is too narrow or too sparse to fit.
    #[error("unresolvable profile: {0}")]
    Unresolvable(String),

    #[error("no misalignment tolerance: aligned loss {aligned_loss:.6e} already exceeds budget {budget:.6e}")]
    NoTolerance { aligned_loss: f64, budget: f64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Configuration(_) => "configuration",
            Error::Numerical(_) => "numerical",
            Error::Unresolvable(_) => "unresolvable",
            Error::NoTolerance { .. } => "no_tolerance",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }

    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Configuration(_)
                | Error::NoTolerance { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
