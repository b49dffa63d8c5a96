use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, found {found}")]
    DimMismatch {
        op: &'static str,
        axis: usize,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("{op}: shapes {left:?} and {right:?} are incompatible")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op}: non-finite value encountered at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("parameter `{name}` has no gradient")]
    MissingGrad { name: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
