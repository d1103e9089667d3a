use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Lévy measure is not integrable: {0}")]
    NonIntegrableLevy(String),

    #[error("rejection sampler exceeded {cap} attempts (acceptance rate estimate {acceptance:.3e}); reduce the step size")]
    RejectionCap { cap: u64, acceptance: f64 },

    #[error("negative moment infinite/undefined for this configuration: {0}")]
    UndefinedNegativeMoment(String),

    #[error("mean is infinite for this subordinator: {0}")]
    InfiniteMean(String),

    #[error("time change is not defined far enough: {0}")]
    DomainExtension(String),

    #[error("time change is not strictly increasing at grid index {index}")]
    NotStrictlyIncreasing { index: usize },

    #[error("value {value} is outside the domain [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("hypothesis {hypothesis} violated: {detail}")]
    Hypothesis { hypothesis: &'static str, detail: String },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("degenerate clock, coupling impossible: {0}")]
    DegenerateClock(String),

    #[error("test function must satisfy f >= 1, found {0}")]
    TestFunctionBelowOne(f64),

    #[error("too few samples: {got} given, at least {need} required")]
    TooFewSamples { got: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
