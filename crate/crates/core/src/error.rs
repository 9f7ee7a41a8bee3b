use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("numerical divergence in trajectory {index} at t = {t:e} s")]
    Divergence { index: u64, t: f64 },

    #[error(
        "thermal state too close to the softening barrier: k_B T/(m w0^2) = {thermal_var:e} m^2, \
         limit {limit:e} m^2"
    )]
    BarrierProximity { thermal_var: f64, limit: f64 },

    #[error("time {t:e} s outside sampled range [{start:e}, {end:e}] s")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("every trajectory escaped the trap")]
    AllEscaped,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("Gaussian fit did not converge after {iterations} iterations (rms residual {rms_residual:e})")]
    FitNotConverged {
        iterations: usize,
        rms_residual: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no reference cloud for t_snap = {t_us} us")]
    MissingReference { t_us: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
