use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no threshold in this regime: the paramagnet is not metastable at g = 0")]
    NoThreshold,

    #[error("step size underflow at t = {t} while evolving block {block}")]
    StepUnderflow { block: String, t: f64 },

    #[error("step budget of {max_steps} exhausted at t = {t} while evolving block {block}")]
    TooManySteps { block: String, t: f64, max_steps: usize },

    #[error("dense reference limited to N <= {max}, got N = {n}")]
    TooLarge { n: usize, max: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
