use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RequalError>;

#[derive(Debug, Error)]
pub enum RequalError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm embedding vector")]
    ZeroNormVector,

    #[error("embedding vector contains a non-finite value at position {0}")]
    NonFiniteValue(usize),

    #[error("embedding vector must have at least one dimension")]
    EmptyVector,

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("length mismatch: {samples} samples but {weights} weights")]
    LengthMismatch { samples: usize, weights: usize },

    #[error("centroid has (near) zero norm; no meaningful nearest neighbour exists")]
    DegenerateCentroid,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("weight {value} at position {index} is outside [0, 1]")]
    InvalidWeight { index: usize, value: f64 },

    #[error("demographic group `{0}` has no seed sentences")]
    EmptySeedSet(String),

    #[error("signed bias requires exactly two groups with majority and minority set")]
    SignedModeRequiresBinaryGroups,

    #[error("invalid group set: {0}")]
    InvalidGroupSet(String),

    #[error("budget {budget} is below the cost of a single query ({cost})")]
    BudgetBelowSingleQuery { budget: f64, cost: f64 },

    #[error("argument {0} outside the open interval (0, 1)")]
    OutOfDomain(f64),

    #[error("token probability {0} outside (0, 1]")]
    InvalidTokenProbability(f64),

    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid output from query {index}: {reason}")]
    InvalidOutput { index: usize, reason: String },

    #[error("retry budget exhausted: issued {issued} queries, {valid} of {needed} valid")]
    RetryExhausted { issued: usize, valid: usize, needed: usize },

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("request timed out: {0}")]
    Timeout(String),

    #[error("HTTP status {code}: {body}")]
    HttpStatus { code: u16, body: String },

    #[error("malformed provider response: {0}")]
    MalformedResponse(String),

    #[error("no embedding configured for text {0:?}")]
    UnknownText(String),

    #[error("invalid simulated distribution: {0}")]
    InvalidDistribution(String),

    #[error("no gender recorded for entity `{0}`")]
    UnknownEntityGender(String),

    #[error("female-to-male ratio undefined: no male entities selected")]
    DivisionByZeroMales,

    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl RequalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RequalError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        RequalError::Json {
            context: context.into(),
            source,
        }
    }

    /// True for failures that originate at a generation or embedding service.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            RequalError::ProviderUnavailable(_)
                | RequalError::Timeout(_)
                | RequalError::HttpStatus { .. }
                | RequalError::MalformedResponse(_)
        )
    }
}
