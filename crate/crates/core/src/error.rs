use std::io;

/// Errors raised by the library. Every public operation returns
/// [`Result`] rather than panicking on invalid input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("b = 0 has no CIR form here; use the squared Bessel routine instead")]
    RedirectToBessel,

    #[error("the squared Bessel process (b = 0) has no stationary distribution")]
    NoStationaryLaw,

    #[error("unsupported moment order {0}; only 1, 2 and 3 have closed forms")]
    UnsupportedMoment(u32),

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("ensembles are not coupled: {0}")]
    Uncoupled(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

/// Rejects NaN and infinities with a domain error naming the argument.
pub(crate) fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(format!("{name} must be finite, got {v}")))
    }
}
