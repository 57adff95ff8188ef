use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },

    #[error("invalid network definition at layer {layer}: {reason}")]
    InvalidDef { layer: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("idx: {reason} (byte offset {offset})")]
    Idx { offset: u64, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            dim,
            detail: detail.into(),
        }
    }
}
