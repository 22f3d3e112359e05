use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Structured failure while decoding one of the binary formats (IDX, CIFAR-10, checkpoints).
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{format} parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub format: &'static str,
    pub offset: u64,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("bad magic: expected {expected:02x?}, found {found:02x?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("length {len} is not a multiple of the {record}-byte record size")]
    Misaligned { len: u64, record: u64 },
    #[error("{0}")]
    Invalid(String),
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("fixed-point solve did not converge after {iterations} iterations (last residual {last:e})", last = residual_trace.last().copied().unwrap_or(f64::NAN))]
    NoConvergence {
        iterations: usize,
        residual_trace: Vec<f64>,
    },

    #[error("target atom mass {target} unreachable; achieved range [{achieved_min}, {achieved_max}] for sigma in (0, 2]")]
    Unreachable {
        target: f64,
        achieved_min: f64,
        achieved_max: f64,
    },

    #[error("non-finite value at layer {layer}")]
    NonFinite { layer: usize },

    #[error("weights of layer {layer} are not diagonal; the spectrum shortcut needs an identity-initialized network")]
    NotDiagonal { layer: usize },

    #[error("samples with zero variance cannot be normalized: {0:?}")]
    ZeroVariance(Vec<usize>),

    #[error("training diverged at epoch {epoch}; last good checkpoint: {}", last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<none>".into()))]
    Diverged {
        epoch: usize,
        last_checkpoint: Option<PathBuf>,
    },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
