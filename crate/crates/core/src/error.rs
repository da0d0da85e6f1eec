use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid value for `{field}`: {reason}")]
    Domain { field: String, reason: String },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("basis under-resolved: {0}")]
    UnderResolved(String),

    #[error("CFL violation at step {step}: cfl = {cfl:.4} exceeds {cfl_max}; suggested dt = {suggested_dt:.3e}")]
    Cfl {
        step: u64,
        cfl: f64,
        cfl_max: f64,
        suggested_dt: f64,
    },

    #[error("non-finite value detected at step {step}")]
    NonFinite { step: u64 },

    #[error("Girsanov shift not representable: {0}")]
    NotRepresentable(String),

    #[error("window too short: {0}")]
    WindowTooShort(String),

    #[error("underpowered: {found} traces, at least {required} required")]
    Underpowered { found: usize, required: usize },

    #[error("out-of-order timestamp: {t} precedes {t_now}")]
    OutOfOrder { t: f64, t_now: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint refused: {0}")]
    CheckpointRefused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Cfl { .. } | Error::NonFinite { .. })
    }
}
