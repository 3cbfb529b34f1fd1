use thiserror::Error;

/// Errors produced by the analysis, simulation, optimization, design and fit routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no real zero-reactance frequencies (device is overdamped for its coupling)")]
    NoZeroReactance,

    #[error("non-convergent: steady state not reached within {cycles} cycles")]
    NonConvergent { cycles: usize },

    #[error("event location failure: {0}")]
    EventLocation(String),

    #[error("empty bracket: harvested power is zero over the whole rectification-voltage grid")]
    EmptyBracket,

    #[error("peak at grid boundary: sweep range too narrow")]
    PeakAtBoundary,

    #[error("no half-power crossing on either side of the peak")]
    NoHalfPowerCrossing,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-convergent fit after {iterations} iterations (rms log residual {residual:.3e})")]
    NonConvergentFit { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and >= 0, got {value}"),
        })
    }
}
