use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible variance: sigma2 = {sigma2} must be below mu(1-mu) = {bound}")]
    InfeasibleVariance { sigma2: f64, bound: f64 },

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("integer overflow computing {0}")]
    Overflow(String),

    #[error("rank {rank} out of range for sum {sum} ({count} states)")]
    RankOutOfRange { rank: u64, sum: usize, count: u64 },

    #[error("state is outside the solved window: {0}")]
    OutOfWindow(String),

    #[error("infeasible solve spec: {0}")]
    InfeasibleSpec(String),

    #[error("hyper-posterior underflow: every weight vanished")]
    NumericUnderflow,

    #[error("route already complete ({flights} flights)")]
    RouteComplete { flights: usize },

    #[error("route incomplete: {observed} of {expected} flights observed")]
    RouteIncomplete { observed: usize, expected: usize },

    #[error("no route in progress")]
    NoRoute,

    #[error("enumeration of {count} compositions exceeds the cap of {cap}; use the Monte Carlo estimator")]
    EnumerationCap { count: u64, cap: u64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invariant violated at row {row}: {msg}")]
    Invariant { row: usize, msg: String },

    #[error("unsupported format version {0}")]
    Version(String),

    #[error("incomplete session {0}")]
    IncompleteSession(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
