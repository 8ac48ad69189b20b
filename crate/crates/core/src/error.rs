use alloc::string::String;

/// Errors raised anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("variable does not belong to this tape")]
    StaleReference,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("degenerate polyline at node {0}: zero arc length")]
    DegeneratePolyline(usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unknown artery class `{0}`")]
    UnknownClass(String),
    #[error("no pair of training trees shares a view angle")]
    NoSameViewPair,
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("template set is empty")]
    EmptyTemplates,
    #[error("no template shares view angle `{0}`")]
    NoSameViewTemplate(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn mismatch(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::DimensionMismatch {
        op,
        expected: expected.into(),
        got: got.into(),
    }
}
