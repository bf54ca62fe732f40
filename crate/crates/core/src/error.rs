use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate task_id {id:?} on lines {first_line} and {second_line}")]
    DuplicateTask {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("line {line}: unknown task/instance id ({task_id:?}, {instance_id:?})")]
    UnknownId {
        task_id: String,
        instance_id: String,
        line: usize,
    },

    #[error("line {line}: duplicate generation for ({task_id:?}, {instance_id:?})")]
    DuplicateGeneration {
        task_id: String,
        instance_id: String,
        line: usize,
    },

    #[error("{path}:{line}: validation error: {message}")]
    InvalidLogprob {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no tokens")]
    NoTokens,

    #[error("missing generation for ({task_id:?}, {instance_id:?})")]
    MissingGeneration { task_id: String, instance_id: String },

    #[error("missing token_logprobs for ({task_id:?}, {instance_id:?})")]
    MissingLogprobs { task_id: String, instance_id: String },

    #[error("missing score for task {task_id:?}")]
    MissingScore { task_id: String },

    #[error("metric mismatch: expected {expected}, found {found}")]
    MetricMismatch { expected: String, found: String },

    #[error("{0}")]
    InvalidData(String),

    #[error("id collision: {id:?} present in both datasets")]
    IdCollision { id: String },

    #[error("empty training set")]
    EmptyTrain,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("k = {k} exceeds the number of training rows ({rows})")]
    InvalidK { k: usize, rows: usize },

    #[error("missing prediction for task {task_id:?}")]
    MissingPrediction { task_id: String },

    #[error("prediction {value} for task {task_id:?} out of range for {metric}")]
    OutOfRange {
        task_id: String,
        value: f64,
        metric: String,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("misaligned conditions: {0}")]
    Misaligned(String),

    #[error("task {task_id:?} has {available} demonstrations, {needed} requested")]
    InsufficientDemonstrations {
        task_id: String,
        needed: usize,
        available: usize,
    },

    #[error("auth missing: set TASKCAST_API_KEY")]
    AuthMissing,

    #[error("HTTP failure after retries for {} instance(s) [{}]: {message}", failed.len(), failed.join(", "))]
    Http {
        failed: Vec<String>,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
