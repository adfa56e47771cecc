use thiserror::Error;

/// Errors raised across filtering, simulation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance not PSD (factorization failed after jitter up to {max_jitter:e})")]
    CovarianceNotPsd { max_jitter: f64 },

    #[error("dynamics diverged{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    DynamicsDiverged { step: Option<usize> },

    #[error("innovation covariance singular")]
    InnovationSingular,

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("bias evaluated before switch time (t_k = {t_k}, t_s = {t_s})")]
    BeforeSwitch { t_s: f64, t_k: f64 },

    #[error("gimbal singularity: pitch {theta} too close to +/-pi/2")]
    GimbalSingularity { theta: f64 },

    #[error("polar singularity: cos(L) vanishes at L = {l}")]
    PolarSingularity { l: f64 },

    #[error("velocity field query outside domain: {0}")]
    FieldDomain(String),

    #[error("branch t_s = {t_s} failed at step {step}: {source}")]
    Branch {
        t_s: f64,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::Malformed(_))
    }
}
