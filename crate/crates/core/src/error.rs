use std::fmt;

use crate::segment::Span;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("spans {first} and {second} overlap")]
    Overlap { first: Span, second: Span },
    #[error("span {span} exceeds sequence length {total_len}")]
    OutOfRange { span: Span, total_len: usize },

    #[error("negative attention {value} at layer {layer}, head {head}, query {query}, key {key}")]
    NegativeEntry {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
        value: f64,
    },
    #[error("non-finite attention at layer {layer}, head {head}, query {query}, key {key}")]
    NonFiniteEntry {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
    },
    #[error("row sum {sum} != 1 at layer {layer}, head {head}, query {query}")]
    RowSum {
        layer: usize,
        head: usize,
        query: usize,
        sum: f64,
    },
    #[error("causal mask violated at layer {layer}, head {head}, query {query}, key {key}")]
    CausalViolation {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
    },
    #[error("attention row {0} has no admissible keys")]
    AllMasked(usize),
    #[error("tensor shape mismatch: {0}")]
    Shape(String),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("header parse error: {0}")]
    HeaderParse(String),
    #[error("length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("system span is empty")]
    EmptySystemSpan,
    #[error("image spans are empty")]
    EmptyImageSpan,
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("response span is empty")]
    EmptyResponseSpan,
    #[error("negative score {0}")]
    NegativeScore(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("series lengths differ ({0} vs {1}) or are shorter than 2")]
    SeriesLength(usize, usize),
    #[error("series has zero variance")]
    DegenerateVariance,

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("symbol {symbol} at position {position} out of range for {vocab} vocabulary of size {size}")]
    SymbolOutOfRange {
        position: usize,
        symbol: usize,
        vocab: Vocab,
        size: usize,
    },
    #[error("trace is stale: parameters changed since forward")]
    StaleTrace,
    #[error("backward is unavailable for traces run with an attention intervention")]
    InterventionTrace,
    #[error("parameter shape mismatch: expected {expected} values, found {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    #[error("gamma must lie in (0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("layer {layer} out of range for {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("group of size {0} is too small (need at least 2)")]
    GroupTooSmall(usize),
    #[error("log-ratio {log_ratio} at trajectory {trajectory}, token {token} exceeds 30")]
    NonFiniteRatio {
        trajectory: usize,
        token: usize,
        log_ratio: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }
}

/// Which embedding table a symbol id indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vocab {
    Text,
    Image,
}

impl fmt::Display for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vocab::Text => f.write_str("text"),
            Vocab::Image => f.write_str("image"),
        }
    }
}
