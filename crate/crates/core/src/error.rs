use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("address {addr:#x} outside the scratchpad")]
    OutOfRange { addr: u64 },

    #[error("address {addr:#x} is not word aligned")]
    Misaligned { addr: u32 },

    #[error("accelerator is busy")]
    Busy,

    #[error("not modeled: {0}")]
    NotModeled(&'static str),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
