use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },

    #[error("not a tensor file (bad magic {0:?})")]
    BadMagic([u8; 4]),

    #[error("unsupported tensor file version {0}")]
    BadVersion(u16),

    #[error("unsupported tensor dtype code {0}")]
    BadDtype(u16),

    #[error("tensor header is truncated")]
    TruncatedHeader,

    #[error("tensor payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("tensor payload has {0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("{0}")]
    Format(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] hoi_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
