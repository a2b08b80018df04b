use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("name `{0}` is already used in this record")]
    NameClash(String),
    #[error("malformed type pattern `{0}`")]
    BadPattern(String),
    #[error("a box signature needs at least one output type")]
    NoOutputs,
}

/// Validation failure while compiling a network expression. `path` names
/// the offending subexpression, e.g. `serial.1/parallel.0/split<k>`.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{path}: {message}")]
pub struct CompileError {
    pub path: String,
    pub message: String,
}

/// A record parked in a synchrocell when the network went quiescent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParkedRecord {
    pub node: String,
    pub record: String,
}

#[derive(Debug, Clone, Error)]
pub enum RunError {
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("no branch of `{node}` accepts record {record}")]
    Routing { node: String, record: String },
    #[error("`{node}` exceeded its limit of {limit} {what}")]
    Divergence { node: String, limit: u64, what: &'static str },
    #[error("box `{node}` failed: {message}")]
    BoxFailed { node: String, message: String },
    #[error("box `{node}` violated its signature: {message}")]
    Contract { node: String, message: String },
    #[error("split `{node}` received a record without tag <{tag}>: {record}")]
    MissingIndexTag { node: String, tag: String, record: String },
    #[error("deadlock: network quiescent with {} parked record(s): {parked:?}", parked.len())]
    Deadlock { parked: Vec<ParkedRecord> },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum NumericError {
    #[error("non-positive pivot {value} at index {index}")]
    NonPositivePivot { index: usize, value: f64 },
    #[error("zero diagonal entry at index {index}")]
    ZeroDiagonal { index: usize },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CholeskyError {
    #[error("block size {b} does not divide matrix size {n}")]
    Indivisible { n: usize, b: usize },
    #[error("block size must be positive")]
    ZeroBlock,
    #[error("tile ({i},{j}) at step {k}: {source}")]
    Numeric {
        k: usize,
        i: usize,
        j: usize,
        #[source]
        source: NumericError,
    },
    #[error("matrix file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Error)]
pub enum CncError {
    #[error("single-assignment violation: {collection}{key} written twice with different values")]
    SingleAssignment { collection: String, key: String },
    #[error("step {step}{tag} failed: {message}")]
    StepFailed { step: String, tag: String, message: String },
    #[error("invalid termination: {} prescribed step(s) never executed: {pending:?}", pending.len())]
    InvalidTermination { pending: Vec<String> },
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Failure reported by a box kernel.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct BoxError(pub String);

impl BoxError {
    pub fn new(message: impl Into<String>) -> Self {
        Self(message.into())
    }
}

impl From<NumericError> for BoxError {
    fn from(e: NumericError) -> Self {
        Self(e.to_string())
    }
}

impl From<CholeskyError> for BoxError {
    fn from(e: CholeskyError) -> Self {
        Self(e.to_string())
    }
}

/// Failure reported by a step function. `Unavailable` is the stall signal
/// raised by a get on a missing item and is handled by the engine.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("item {collection}{key} unavailable")]
    Unavailable { collection: String, key: String },
    #[error("{0}")]
    Failed(String),
}

impl From<NumericError> for StepError {
    fn from(e: NumericError) -> Self {
        Self::Failed(e.to_string())
    }
}

/// Failure of one of the factorization drivers.
#[derive(Debug, Clone, Error)]
pub enum FactorError {
    #[error(transparent)]
    Cholesky(#[from] CholeskyError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Cnc(#[from] CncError),
    /// The network finished without producing the expected result.
    #[error("{0}")]
    Output(String),
}
