use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("object {0} is absent from the first-frame annotation")]
    ObjectAbsent(usize),
    #[error("no optical flow for frame pair ({from}, {to}) and estimation is disabled")]
    MissingFlow { from: usize, to: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: String) -> Self {
        Error::Shape { op, dim, detail }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
