use thiserror::Error;

/// Error taxonomy. `Config` maps to process exit code 2, `Numerical` and
/// `Guard` to 3, everything else that aborts a run to 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape/kind mismatches, out-of-band sampling, insufficient resolution.
    #[error("structural: {0}")]
    Structural(String),

    /// Inputs violate a documented precondition (e.g. non-divergence-free pair).
    #[error("domain: {0}")]
    Domain(String),

    /// Bad or inconsistent run configuration.
    #[error("config: {0}")]
    Config(String),

    /// Blow-up, NaN, or a stability guard tripping mid-solve.
    #[error("numerical: {0}")]
    Numerical(String),

    /// Background monotonicity guard violated (positivity or wall margin).
    #[error("guard: {0}")]
    Guard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn guard(msg: impl Into<String>) -> Self {
        Error::Guard(msg.into())
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) | Error::Guard(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
