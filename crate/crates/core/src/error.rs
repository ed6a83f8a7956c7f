use std::path::PathBuf;

/// Library-wide error type.
///
/// Variants are grouped by how a consumer should react: `Config`, `Io`,
/// `Dataset`, `Truncated`, `Ordering`, `OutOfBounds` and `FieldOverflow` are
/// input problems; `Compat` means two otherwise valid artifacts do not fit
/// together; `Corrupt` means a model blob failed structural validation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("event ({x},{y}) outside sensor geometry {width}x{height}")]
    OutOfBounds {
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },

    #[error("timestamp regression at record {index}: {t} µs is more than {slack} µs before {previous} µs")]
    Ordering {
        index: usize,
        t: i64,
        previous: i64,
        slack: i64,
    },

    #[error("truncated record at byte offset {offset} ({remaining} trailing bytes)")]
    Truncated { offset: usize, remaining: usize },

    #[error("event {index}: {field} = {value} does not fit the file format")]
    FieldOverflow {
        index: usize,
        field: &'static str,
        value: i64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite {what} during training")]
    NonFinite { what: String },

    #[error("corrupt model blob at offset {offset}: {what}")]
    Corrupt { offset: usize, what: String },

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("incompatible: {0}")]
    Compat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
