use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Static type inference rejected an op application.
    #[error("{op}: {}{msg}", .index.map(|i| format!("input {i}: ")).unwrap_or_default())]
    Type { op: String, index: Option<usize>, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    /// A kernel failed at runtime.
    #[error("kernel {op}: {msg}")]
    Kernel { op: String, msg: String },

    #[error("non-differentiable op `{op}` on the path to `{var}`")]
    NonDifferentiable { op: String, var: String },

    #[error("R-op unsupported for op `{0}`")]
    RopUnsupported(String),

    #[error("cost must be a scalar, got rank {0}")]
    NonScalarCost(usize),

    #[error("cannot differentiate with respect to integer variable `{0}`")]
    IntegerWrt(String),

    #[error("{0}")]
    Diff(String),

    /// A call argument was rejected by input checking.
    #[error("input {index}: {msg}")]
    Input { index: usize, msg: String },

    #[error("invalid graph: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error("scan: {0}")]
    Scan(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn ty(op: &str, index: Option<usize>, msg: impl Into<String>) -> Error {
        Error::Type { op: op.to_string(), index, msg: msg.into() }
    }

    pub(crate) fn kernel(op: &str, msg: impl Into<String>) -> Error {
        Error::Kernel { op: op.to_string(), msg: msg.into() }
    }
}
