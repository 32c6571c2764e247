use thiserror::Error;

/// Errors produced by the simulator, metrics and optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A physical parameter is outside its allowed domain.
    #[error("invalid parameter `{name}`: {reason}")]
    ParamDomain { name: &'static str, reason: String },

    /// An argument to an operation is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite numbers appeared in an input or intermediate result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The rate model has no unique stationary state.
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    /// Inconsistent binning, windows or grids.
    #[error("configuration error: {0}")]
    Config(String),

    /// SNR or contrast requested where the denominator vanishes.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// The sinusoid fit could not be formed.
    #[error("fit error: {0}")]
    Fit(String),

    /// The objective returned NaN or infinity.
    #[error("objective returned non-finite value {value} at u = {u:?}")]
    NonFiniteObjective { u: Vec<f64>, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
