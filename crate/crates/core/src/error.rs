use thiserror::Error;

/// Errors produced by the simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SddeError {
    #[error("delay r = {r} is not an integer multiple of dt = {dt}")]
    DelayNotOnGrid { r: f64, dt: f64 },

    #[error("time {t} is not an integer multiple of dt = {dt}")]
    TimeNotOnGrid { t: f64, dt: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("segment mismatch: {0}")]
    GridMismatch(String),

    #[error("step index {index} out of range 0..={max}")]
    StepOutOfRange { index: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite {what} at segment ending in {segment_tail:?}")]
    NonFinite {
        what: &'static str,
        segment_tail: Vec<f64>,
    },

    #[error("integrator failed at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<SddeError>,
    },

    #[error("model does not provide {0}")]
    MissingCapability(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("importance weight overflows: log exponent = {0}")]
    WeightOverflow(f64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("sample of size {size} exceeds exact-solver cap {cap}; subsample first")]
    SampleTooLarge { size: usize, cap: usize },

    #[error("test functional violates the declared Lipschitz bound on pair ({i}, {j}): |f diff| = {gap}, d = {dist}")]
    LipschitzViolation {
        i: usize,
        j: usize,
        gap: f64,
        dist: f64,
    },

    #[error("Lyapunov function returned {value} < 1")]
    LyapunovBelowOne { value: f64 },

    #[error("rate function: {0}")]
    RateFunction(String),

    #[error("all {0} paths were discarded by hypothesis probing")]
    AllPathsDiscarded(usize),

    #[error("horizon arithmetic overflow")]
    HorizonOverflow,
}

pub type Result<T> = std::result::Result<T, SddeError>;

impl SddeError {
    pub(crate) fn at_step(self, step: usize) -> Self {
        SddeError::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        SddeError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
