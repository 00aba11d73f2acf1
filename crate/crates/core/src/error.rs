//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected `head<TAB>relation<TAB>tail`, found {fields} field(s)")]
    MalformedLine {
        path: String,
        line: usize,
        fields: usize,
    },

    #[error("{path}: no triples found")]
    EmptyTripleFile { path: String },

    #[error("entity id {id} out of range (|E| = {count})")]
    EntityOutOfRange { id: usize, count: usize },

    #[error("relation id {id} out of range (|R| = {count})")]
    RelationOutOfRange { id: usize, count: usize },

    #[error("unknown entity name `{0}`")]
    UnknownEntity(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("hop count must be at least 1, got {0}")]
    InvalidHopCount(usize),

    #[error("distance label {value} out of range [0, {max}]")]
    LabelOutOfRange { value: usize, max: usize },

    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("index {index} out of range in {op} (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropout(f64),

    #[error("backward seed must be a 1x1 scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),

    #[error("backward already ran on this tape")]
    TapeConsumed,

    #[error("invalid stack spec `{spec}`: {reason}")]
    InvalidStackSpec { spec: String, reason: String },

    #[error("checkpoint parameter `{name}` has shape {found}, expected {expected}")]
    CheckpointShape {
        name: String,
        found: String,
        expected: String,
    },

    #[error("checkpoint is missing parameter `{0}`")]
    CheckpointMissing(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("{0} entities is too small to realize the planted rule (need at least {1})")]
    SynthTooSmall(usize, usize),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("margin must be positive, got {0}")]
    InvalidMargin(f64),

    #[error("cannot score against an empty score list")]
    EmptyScores,

    #[error("config file {path}:{line}: expected `key = value`")]
    BadConfigLine { path: String, line: usize },

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
