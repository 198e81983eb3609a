use thiserror::Error;

#[derive(Error, Debug)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite values encountered")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op}: invalid argument: {detail}")]
    InvalidArg { op: &'static str, detail: String },
    #[error("{op}: operands recorded on different tapes")]
    TapeMismatch { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn arg_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::InvalidArg {
        op,
        detail: detail.into(),
    })
}
