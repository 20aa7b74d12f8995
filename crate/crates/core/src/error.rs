use thiserror::Error;

/// Errors raised by the model, simulation and pricing layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The argument lies outside the domain where the requested Laplace
    /// exponent quantity is finite.
    #[error("z = {z} is outside the domain of the Laplace exponent ({what})")]
    Domain { z: f64, what: &'static str },

    /// Quadrature could not decide convergence within the node budget.
    #[error("indeterminate quadrature for {what} at z = {z}: node budget exhausted")]
    Indeterminate { z: f64, what: &'static str },

    #[error("drift undefined at z = {z}, rating index {rating}: {reason}")]
    DriftDomain {
        z: f64,
        rating: usize,
        reason: String,
    },

    #[error("rating index {index} out of range for a ladder of {len} ratings")]
    RatingIndex { index: usize, len: usize },

    /// A negative intensity decrement: the short end is not monotone in the
    /// rating, so the loss compensator is not a measure.
    #[error("model inconsistency at t = {t}: intensity decrement at rating {rating} is {decrement}")]
    ModelInconsistency { t: f64, rating: usize, decrement: f64 },

    #[error("maturity {maturity} at t = {t} lies beyond the surface grid (z_max = {z_max})")]
    MaturityBeyondGrid { maturity: f64, t: f64, z_max: f64 },

    #[error("attachment {0} is not a point of the rating ladder")]
    NotOnLadder(f64),

    #[error("step failed at t = {t}: {source}")]
    Step {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Wraps an error with the simulation time at which it happened.
pub(crate) fn at_time(t: f64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Step { .. } => e,
        other => Error::Step {
            t,
            source: Box::new(other),
        },
    }
}
