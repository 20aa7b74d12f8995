//! Lévy-driven HJMM models of defaultable (CDO) term structures.
//!
//! The forward surface `r(t, z, x_i)` (Musiela parametrization, one curve per
//! rating `x_i`) is evolved by an explicit mild-form stepper whose drift is
//! fixed by the Laplace exponent of the driving Lévy process. The loss
//! process is read off the short end of the surface. Volatility families are
//! certified against the positivity and monotonicity conditions by sampling.

pub mod error;
pub mod hjmm;
pub mod levy;
pub mod market;
pub mod quadrature;
pub mod seed;
pub mod statespace;
pub mod verify;
pub mod volatility;

pub use error::{Error, Result};

use serde::Serialize;

/// Outcome of a numerical check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }

    /// Fail dominates indeterminate, which dominates pass.
    pub fn and(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Indeterminate, _) | (_, Indeterminate) => Indeterminate,
            _ => Pass,
        }
    }
}
