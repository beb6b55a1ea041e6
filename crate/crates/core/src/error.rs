use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?} in {path}, expected \"TBT1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("unknown dtype code {code} in {path}")]
    UnknownDType { path: PathBuf, code: u8 },

    #[error("truncated tensor file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("trailing bytes in tensor file {path}: expected {expected} bytes, found {found}")]
    TrailingBytes {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("manifest {path}, line {line}: {msg}")]
    ManifestSyntax {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate parameter name `{0}` in manifest")]
    DuplicateParameter(String),

    #[error("tensor file for parameter `{name}` is missing: {path}")]
    MissingTensorFile { name: String, path: PathBuf },

    #[error("bad metadata value for `{key}`: {value:?} ({msg})")]
    BadMetadata {
        key: String,
        value: String,
        msg: String,
    },

    #[error("input contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("block size mismatch: {left} vs {right}")]
    BlockMismatch { left: usize, right: usize },

    #[error("parameter sets differ: {0}")]
    ParameterSetMismatch(String),

    #[error("shape mismatch for parameter `{name}`: expected {expected:?}, found {found:?}")]
    ParameterShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("zero-norm input: {0}")]
    ZeroNorm(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
