use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration ({code}): {message}")]
    Config { code: &'static str, message: String },

    #[error("insufficient excitation: {0}")]
    InsufficientExcitation(String),

    #[error("critical gains required when the proximity weight is positive")]
    MissingCriticalGains,

    #[error("no spectral bin between {f_low} Hz and {f_high} Hz")]
    WindowEmpty { f_low: f64, f_high: f64 },

    #[error("nominal gains already exceed the vibration threshold (peak {peak_mm:.3e} mm)")]
    NominalUnstable { peak_mm: f64 },

    #[error("relay experiment did not settle into a sustained oscillation: {0}")]
    NoSustainedOscillation(String),

    #[error("safe seed {index} is infeasible (constraint {constraint:.4e} > bound {bound:.4e})")]
    UnsafeSeed {
        index: usize,
        constraint: f64,
        bound: f64,
    },

    #[error("segment too short for a spectrum: {len} samples (need at least {min})")]
    SegmentTooShort { len: usize, min: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn config(code: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            code,
            message: message.into(),
        }
    }

    /// Diagnostic code for config errors, `None` otherwise.
    pub fn config_code(&self) -> Option<&'static str> {
        match self {
            Error::Config { code, .. } => Some(code),
            _ => None,
        }
    }
}
