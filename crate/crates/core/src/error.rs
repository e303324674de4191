use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("code {code} at ({row}, {col}) does not fit in {bits} bits")]
    CodeRange { row: usize, col: usize, code: u32, bits: u8 },

    #[error("layout error: expected {expected:?}, found {found:?}")]
    Layout {
        expected: crate::codec::Layout,
        found: crate::codec::Layout,
    },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
