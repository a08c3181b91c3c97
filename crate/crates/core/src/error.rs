use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("cross pattern requires even total photon number, got {0}")]
    OddCrossOrder(u32),

    #[error("stream too large: {expected:.3e} expected events exceeds the limit of {limit:.0e}")]
    StreamTooLarge { expected: f64, limit: f64 },

    #[error("coincidence order {order} exceeds detector count {detectors}")]
    OrderExceedsDetectors { order: u32, detectors: usize },

    #[error("intensity sample grids do not match")]
    MismatchedGrids,

    #[error("no signal: zero total counts at every scan point")]
    NoSignal,

    #[error("pattern is identically zero and cannot be normalized")]
    ZeroPattern,

    #[error("malformed pattern: {0}")]
    MalformedPattern(String),

    #[error("no local maximum within pi/2 of the center hint {hint:.4} rad")]
    NoPeak { hint: f64 },

    #[error("fringe truncated by grid: no {side} half-maximum crossing")]
    FringeTruncated { side: &'static str },

    #[error("chi-square undefined: all errors are zero but residuals are not (use counting-mode errors)")]
    UndefinedChiSquare,

    #[error("ratio table requires an n = 1 estimate")]
    MissingFirstOrder,

    #[error("schema mismatch: missing columns {}", .0.join(", "))]
    SchemaMismatch(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
