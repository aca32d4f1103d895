use alloc::string::String;

use crate::scaffold::TreeError;
use crate::spanrep::Span;
use crate::tensor::{ShapeError, TapeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("empty sentence")]
    EmptySentence,
    #[error("span {span} outside a sentence of {len} tokens")]
    SpanOutOfBounds { span: Span, len: usize },
    #[error("arguments {0} and {1} overlap")]
    OverlappingArguments(Span, Span),
    #[error("gold segment {span} is wider than the maximum width {max_width}")]
    SegmentTooWide { span: Span, max_width: usize },
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(&'static str),
    #[error("score table has {actual} entries, expected {expected}")]
    ScoreTableSize { expected: usize, actual: usize },
    #[error("label `{0}` is not in the label inventory")]
    UnknownLabel(String),
    #[error("antecedent {antecedent} does not precede {span}")]
    NotPreceding { span: usize, antecedent: usize },
    #[error("the {0} stream is empty")]
    EmptyStream(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure at epoch {epoch}, batch {batch}: {detail}")]
    Numerical { epoch: usize, batch: usize, detail: String },
}

impl Error {
    /// Whether the error comes from non-finite values rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Tape(_))
    }
}
