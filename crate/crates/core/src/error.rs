//! Shared error type for the whole crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across training, extraction, solving and IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector had a different length than the consumer expected.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Two paired collections disagreed in length.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// An input collection that must be nonempty was empty.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A value that must be exactly +1 or -1 was something else.
    #[error("invalid sign value {0}: expected +1 or -1")]
    InvalidSign(i32),

    /// Training data did not contain at least one example of each class.
    #[error("degenerate training set: need at least one positive and one negative example")]
    DegenerateTrainingSet,

    /// The training loss left the realm of finite numbers.
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    /// Refusing to enumerate 2^K - 1 subsets for a very wide hidden layer.
    #[error("subset enumeration too large: hidden_count {hidden_count} exceeds the limit of {limit}")]
    SubsetEnumerationTooLarge { hidden_count: usize, limit: usize },

    /// A label string was not present in the vocabulary.
    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    /// A part-of-speech tag was not present in the vocabulary.
    #[error("unknown part-of-speech tag {0:?}")]
    UnknownPosTag(String),

    /// A template needed part-of-speech tags but the sequence had none.
    #[error("template requires part-of-speech tags but the sequence has none")]
    MissingPosTags,

    /// Negative generation produced nothing for this template/corpus pair.
    #[error("degenerate template on corpus: no negative examples could be generated")]
    DegenerateTemplate,

    /// A label did not follow the `O` / `B-X` / `I-X` shape.
    #[error("invalid IOB label {0:?}")]
    InvalidIobLabel(String),

    /// An `I-X` label appeared without a matching `B-X`/`I-X` predecessor.
    #[error("invalid IOB transition: {prev:?} -> {next:?}")]
    InvalidIobTransition { prev: String, next: String },

    /// A text artifact failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An error occurred while processing one sequence of a corpus.
    #[error("sequence {index}: {source}")]
    Sequence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Constrained beam search ran out of feasible states and fallback was off.
    #[error("beam search dead end at position {position}: every candidate violates a constraint system")]
    BeamDeadEnd { position: usize },

    /// A parameter or configuration value was out of range or inconsistent.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Command-line or config-file usage error (maps to exit code 2).
    #[error("{0}")]
    Usage(String),

    /// IO failure with the offending path.
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an IO error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wrap an error with the index of the corpus sequence it came from.
    pub fn in_sequence(index: usize, source: Error) -> Self {
        Error::Sequence { index, source: Box::new(source) }
    }

    /// Parse error helper with a 1-based line number.
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}
