//! Crate-wide error type and exit-code mapping for the CLI.

use std::path::PathBuf;

use thiserror::Error;

/// All failure modes across the toolkit.
///
/// Variants are grouped by the subsystem that raises them; the CLI maps each
/// variant to a stable process exit code via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    // --- numerics ---
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("iterative diagonalization failed to converge within {0} sweeps")]
    NotDiagonalizableNumerically(usize),

    // --- summaries ---
    #[error("table has no rows or no columns")]
    EmptyTable,
    #[error("no rows remain after complete-case filtering")]
    NoRowsRemain,
    #[error("log transform of '{column}' requires strictly positive values, found {value} at data row {row}")]
    NonPositiveForLog {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("unknown base variable '{0}'")]
    UnknownBaseVariable(String),
    #[error("provider '{provider}' has {rows} rows; at least 2 are required")]
    TooFewRows { provider: String, rows: usize },
    #[error("summaries do not share a schema: {0}")]
    SchemaMismatch(String),
    #[error("variable '{0}' has zero pooled variance; cannot standardize")]
    ZeroVariance(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),

    // --- pseudogen ---
    #[error("random source draws stayed degenerate after {0} attempts")]
    DegenerateSource(usize),
    #[error("provider '{id}': {source}")]
    Provider {
        id: String,
        #[source]
        source: Box<Error>,
    },

    // --- regression ---
    #[error("response variable '{0}' not found in summary")]
    ResponseNotFound(String),
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("need more observations than coefficients: n={n}, p={p}")]
    TooFewObservations { n: usize, p: usize },
    #[error("summary lacks the third/fourth joint moments required for the robust sandwich")]
    MissingHigherMoments,

    // --- lmm ---
    #[error("likelihood is not finite at the supplied parameters: {0}")]
    NonFiniteLikelihood(String),
    #[error("optimizer did not converge after {restarts} restarts; best criterion {best}")]
    NonConvergence { restarts: usize, best: f64 },
    #[error("fixed-effect design is singular")]
    SingularFixedDesign,
    #[error("fits do not describe the same response/data: {0}")]
    MismatchedData(String),

    // --- interchange ---
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("unsupported format version '{found}', expected '{expected}'")]
    VersionMismatch { found: String, expected: String },
    #[error("parse error at data row {row}, column '{column}': {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable CLI exit code: 2 for data/schema problems, 3 for numerical failures.
    ///
    /// Usage errors (bad flags) are handled by the CLI layer itself and map to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPositiveDefinite(_)
            | Error::NotDiagonalizableNumerically(_)
            | Error::DegenerateSource(_)
            | Error::SingularDesign
            | Error::NonFiniteLikelihood(_)
            | Error::NonConvergence { .. }
            | Error::SingularFixedDesign => 3,
            Error::Provider { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
