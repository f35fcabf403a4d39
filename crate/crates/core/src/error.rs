use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used for process exit codes and C error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    InputData,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("manifest line {line}: duplicate image_id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("unknown subset tag `{0}`")]
    UnknownSubsetTag(String),
    #[error("unknown image_id `{0}`")]
    UnknownImageId(String),
    #[error("cannot decode image {}: {message}", path.display())]
    ImageDecode { path: PathBuf, message: String },
    #[error("cannot encode image {}: {message}", path.display())]
    ImageEncode { path: PathBuf, message: String },
    #[error("image {width}x{height} too small: {requirement}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        requirement: String,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least 2 samples to fit PCA, got {0}")]
    TooFewSamples(usize),
    #[error("chi-square distance requires non-negative inputs (value {value} at {index})")]
    NegativeInput { index: usize, value: f64 },
    #[error("bad magic: expected `{expected}`")]
    BadMagic { expected: &'static str },
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: u64, found: u64 },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("id mismatch: {0}")]
    IdMismatch(String),
    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("average precision is undefined for a query without relevant items")]
    UndefinedAp,
    #[error("no query has a relevant item; nothing to evaluate")]
    NoIncludedQueries,
    #[error("empty manifest")]
    EmptyManifest,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config: {0}")]
    Config(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::UnknownSubsetTag(_) => {
                ErrorClass::Usage
            }
            Error::Internal(_) => ErrorClass::Internal,
            _ => ErrorClass::InputData,
        }
    }
}
