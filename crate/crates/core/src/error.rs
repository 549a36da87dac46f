//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the disaggregation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario violates a structural invariant.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A tabular input file violates its schema. Names file, row and column.
    #[error("{file}: row {row}: column `{column}`: {message}")]
    Schema {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    /// Filesystem failure, with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON document (manifest, trained parameters, network).
    #[error("{path}: {message}")]
    Json { path: String, message: String },

    /// A demand or weight field does not cover the agent it is applied to.
    #[error("missing demand or weight for agent {0}")]
    MissingAgent(u64),

    /// Two factor fields were combined over different agent sets.
    #[error("factor fields cover different agent sets")]
    FactorKeyMismatch,

    /// Per-source allocation weights fail their distribution contract.
    #[error("weights for source {source_id} sum to {sum}, expected 1 within 1e-9")]
    WeightsNotNormalized { source_id: u64, sum: f64 },

    /// All reference agents carry a zero auxiliary signal.
    #[error("degenerate {0} field: reference median is zero")]
    DegenerateFactor(&'static str),

    /// A method specification violates the construction rules.
    #[error("invalid method spec: {0}")]
    InvalidMethodSpec(String),

    /// Invalid configuration value outside scenario structure.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Training failed (divergence or non-finite loss/gradient).
    #[error("training failed: {0}")]
    Training(String),

    /// Statistical routine received unusable input.
    #[error("invalid statistical input: {0}")]
    Stats(String),

    /// Power-flow model construction or solve failed structurally.
    #[error("power flow: {0}")]
    PowerFlow(String),
}

impl Error {
    /// Process exit code contract: 1 for validation errors (bad inputs,
    /// schema violations, missing files), 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidScenario(_)
            | Error::Schema { .. }
            | Error::Json { .. }
            | Error::InvalidMethodSpec(_)
            | Error::InvalidConfig(_)
            | Error::WeightsNotNormalized { .. } => 1,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
