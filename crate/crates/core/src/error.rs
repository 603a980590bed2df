use std::path::PathBuf;

/// Errors raised by the effect chain, the fitting pipeline and the analysis tools.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid interval [{lo}, {hi}] for {name}")]
    InvalidInterval { name: String, lo: f64, hi: f64 },

    #[error("{name} = {value} lies on or outside its interval [{lo}, {hi}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expected {expected} values, got {actual}")]
    Layout { expected: usize, actual: usize },

    #[error("filter poles are repeated or nearly so: {0} vs {1}")]
    RepeatedPoles(f64, f64),

    #[error("unstable filter: pole modulus {0}")]
    Unstable(f64),

    #[error("non-finite intermediate signal in stage `{0}`")]
    Stage(&'static str),

    #[error("matrix logarithm did not converge")]
    Logm,

    #[error("signal is silent")]
    Silent,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("loudness: {0}")]
    Loudness(String),

    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize, trace: Vec<f64> },

    #[error("track rejected: {0}")]
    Rejected(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} = {value}")))
    }
}
