use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("operation requires a compact manifold: {0}")]
    NonCompactManifold(String),

    #[error("numerical blowup: {0}")]
    NumericalBlowup(String),

    #[error("rank collapse: {0}")]
    RankCollapse(String),

    #[error("parse error at position {position}: expected {expected}")]
    Parse { position: usize, expected: String },

    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    #[error("bad scenario parameters: {0}")]
    BadParams(String),

    #[error("manifold mismatch: {0}")]
    ManifoldMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable code, used by the CLI diagnostic line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate-input",
            Error::NonCompactManifold(_) => "non-compact",
            Error::NumericalBlowup(_) => "blowup",
            Error::RankCollapse(_) => "rank-collapse",
            Error::Parse { .. } => "parse",
            Error::UnknownScenario(_) => "unknown-scenario",
            Error::BadParams(_) => "bad-params",
            Error::ManifoldMismatch(_) => "manifold-mismatch",
            Error::InvalidInput(_) => "invalid-input",
            Error::Io(_) => "io",
            Error::Config(_) => "config",
        }
    }

    /// CLI exit code: 1 for config/parse problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::UnknownScenario(_)
            | Error::BadParams(_)
            | Error::Config(_)
            | Error::InvalidInput(_)
            | Error::Io(_) => 1,
            Error::DegenerateInput(_)
            | Error::NonCompactManifold(_)
            | Error::NumericalBlowup(_)
            | Error::RankCollapse(_)
            | Error::ManifoldMismatch(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
