use std::io;

use crate::model::ProjectionRef;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("neuron {index} out of range for {proj} (d = {width})")]
    NeuronOutOfRange {
        proj: ProjectionRef,
        index: usize,
        width: usize,
    },

    #[error("projection mismatch: {expected} vs {actual}")]
    ProjectionMismatch {
        expected: ProjectionRef,
        actual: ProjectionRef,
    },

    #[error("NAG configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{file}: malformed data at byte offset {offset}: {reason}")]
    Format {
        file: &'static str,
        offset: u64,
        reason: String,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("duplicate document id {id} (lines {first_line} and {second_line})")]
    DuplicateId {
        id: u64,
        first_line: usize,
        second_line: usize,
    },

    #[error("missing score for document {0}")]
    MissingScore(u64),

    #[error("document {doc_id}: {source}")]
    Document {
        doc_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Attaches the id of the document being processed.
    pub fn in_doc(self, doc_id: u64) -> Error {
        Error::Document {
            doc_id,
            source: Box::new(self),
        }
    }
}
