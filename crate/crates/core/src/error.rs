use thiserror::Error;

/// Errors raised by the simulation and analysis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate coupling: every atom has zero coupling to the probe mode")]
    DegenerateCoupling,

    #[error("length mismatch: {spins} spins but {couplings} couplings")]
    LengthMismatch { spins: usize, couplings: usize },

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(&'static str),

    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),

    #[error("fitted extremum at {at} lies outside the sampled range [{lo}, {hi}]")]
    Extrapolation { at: f64, lo: f64, hi: f64 },

    #[error("exact enumeration over {0} atoms refused (limit is {max})", max = crate::spin::MAX_ENUMERATION_ATOMS)]
    TooManyAtoms(usize),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
