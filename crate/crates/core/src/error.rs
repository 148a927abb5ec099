use thiserror::Error;

/// Errors raised by law construction, bound computation and the study harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("incomplete law: no entry for {what} at cell {cell}")]
    IncompleteLaw { what: String, cell: String },

    #[error("positivity violated at cell {cell}: propensity {value}")]
    Positivity { cell: String, value: f64 },

    #[error("{what} is not normalized (sum = {sum})")]
    NotNormalized { what: String, sum: f64 },

    #[error("empty support")]
    EmptySupport,

    #[error("optimizer did not converge: best value {best}, gap bound {gap}")]
    NonConvergence { best: f64, gap: f64 },

    #[error("worst-case construction failed: {0}")]
    Construction(String),

    #[error("oracle instance exceeds caps: {0}")]
    OracleCap(String),

    #[error("direction mismatch: {0}")]
    DirectionMismatch(String),

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Input errors map to exit code 1, computation failures to exit code 2.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::NonFinite(_)
                | Error::IncompleteLaw { .. }
                | Error::Positivity { .. }
                | Error::NotNormalized { .. }
                | Error::EmptySupport
                | Error::OracleCap(_)
                | Error::DirectionMismatch(_)
                | Error::Config { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(x: f64, what: &'static str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what))
    }
}
