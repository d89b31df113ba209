use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero-norm input: {0}")]
    ZeroNorm(&'static str),

    #[error("shape mismatch: {what} (expected {expected}, got {got})")]
    ShapeMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("projection undefined: row {row} of `{group}` collapsed to zero")]
    DegenerateProjection { group: String, row: usize },

    #[error("row {row} of `{group}` has zero initial norm")]
    ZeroInitialRow { group: String, row: usize },

    #[error("forward state is stale: parameters changed since the forward pass")]
    StaleForward,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
}

pub(crate) fn out_of_range(name: &'static str, value: f64, range: &'static str) -> Error {
    Error::OutOfRange { name, value, range }
}
