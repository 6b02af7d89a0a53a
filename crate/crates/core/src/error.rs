use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("diffusion event {index}: self-loop {promoter} -> {promoter} rejected")]
    SelfLoop { index: usize, promoter: String },
    #[error("{what}: non-finite timestamp")]
    NonFiniteTime { what: &'static str },
    #[error("unknown cascade {0}")]
    UnknownCascade(u32),
    #[error("store spans {span} time units but 4 windows of {window} need {required} (short by {deficit})")]
    SpanTooShort { span: f64, window: f64, required: f64, deficit: f64 },
    #[error("empty store: no diffusion events")]
    EmptyStore,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("cosine similarity needs static cascade features; this store has none (use the jaccard similarity)")]
    MissingCascadeFeatures,
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("{what}: negative value {value} at index {index}")]
    NegativeValue { what: &'static str, index: usize, value: f64 },
    #[error("{what}: length mismatch ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("{what}: empty input")]
    EmptyInput { what: &'static str },
    #[error("cascade {cascade} has no observed events at cutoff {cutoff}")]
    NoObservedEvents { cascade: u32, cutoff: f64 },
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("missing precomputed inputs for task {0}")]
    MissingPrecompute(usize),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("parameter {name}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch { name: String, expected: (usize, usize), actual: (usize, usize) },
    #[error("split {0} has no tasks")]
    EmptySplit(&'static str),
}
