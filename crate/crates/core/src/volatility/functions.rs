//! Named scalar building blocks for volatility families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function from the named library.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    /// `value`.
    Constant { value: f64 },
    /// `clamp(intercept + slope x, 0, cap)`.
    LinearCapped { intercept: f64, slope: f64, cap: f64 },
    /// `level e^{-rate x}`.
    ExpDecay { level: f64, rate: f64 },
    /// `scale tanh(rate x / 2)`: zero at the origin, increasing and concave
    /// on `[0, ∞)` for positive parameters.
    LogisticConcave { scale: f64, rate: f64 },
}

impl ScalarFn {
    pub fn name(&self) -> &'static str {
        match self {
            ScalarFn::Constant { .. } => "constant",
            ScalarFn::LinearCapped { .. } => "linear_capped",
            ScalarFn::ExpDecay { .. } => "exp_decay",
            ScalarFn::LogisticConcave { .. } => "logistic_concave",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScalarFn::Constant { value } => value.is_finite(),
            ScalarFn::LinearCapped {
                intercept,
                slope,
                cap,
            } => intercept.is_finite() && slope.is_finite() && cap >= 0.0,
            ScalarFn::ExpDecay { level, rate } => level.is_finite() && rate.is_finite(),
            ScalarFn::LogisticConcave { scale, rate } => scale.is_finite() && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("bad parameters for {self:?}")))
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Constant { value } => value,
            ScalarFn::LinearCapped {
                intercept,
                slope,
                cap,
            } => (intercept + slope * x).clamp(0.0, cap),
            ScalarFn::ExpDecay { level, rate } => level * (-rate * x).exp(),
            ScalarFn::LogisticConcave { scale, rate } => scale * (0.5 * rate * x).tanh(),
        }
    }

    /// Analytic derivative (zero on the flat parts of `linear_capped`).
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Constant { .. } => 0.0,
            ScalarFn::LinearCapped {
                intercept,
                slope,
                cap,
            } => {
                let y = intercept + slope * x;
                if y > 0.0 && y < cap {
                    slope
                } else {
                    0.0
                }
            }
            ScalarFn::ExpDecay { level, rate } => -rate * level * (-rate * x).exp(),
            ScalarFn::LogisticConcave { scale, rate } => {
                let th = (0.5 * rate * x).tanh();
                0.5 * scale * rate * (1.0 - th * th)
            }
        }
    }

    /// `sup |f|` over `[lo, hi]`. Every library function is monotone, so the
    /// endpoints suffice.
    pub fn sup_abs(&self, lo: f64, hi: f64) -> f64 {
        self.value(lo).abs().max(self.value(hi).abs())
    }

    /// `sup |f′|` over `[lo, hi]`.
    pub fn sup_abs_derivative(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            ScalarFn::Constant { .. } => 0.0,
            ScalarFn::LinearCapped {
                intercept,
                slope,
                cap,
            } => {
                // Nonzero slope only where the affine part is strictly inside (0, cap).
                let a = intercept + slope * lo;
                let b = intercept + slope * hi;
                let (m, n) = (a.min(b), a.max(b));
                if n > 0.0 && m < cap {
                    slope.abs()
                } else {
                    0.0
                }
            }
            ScalarFn::ExpDecay { .. } => self.derivative(lo).abs().max(self.derivative(hi).abs()),
            ScalarFn::LogisticConcave { .. } => {
                let x = if lo <= 0.0 && hi >= 0.0 {
                    0.0
                } else if lo > 0.0 {
                    lo
                } else {
                    hi
                };
                self.derivative(x).abs()
            }
        }
    }
}

/// A library function with an optional declared upper bound `f̄ ≥ f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    #[serde(flatten)]
    pub f: ScalarFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl Factor {
    pub fn new(f: ScalarFn) -> Self {
        Self { f, bound: None }
    }

    pub fn bounded(f: ScalarFn, bound: f64) -> Self {
        Self { f, bound: Some(bound) }
    }

    pub fn one() -> Self {
        Self::bounded(ScalarFn::Constant { value: 1.0 }, 1.0)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.f.value(x)
    }

    /// The declared bound, or the sampled sup over `[lo, hi]` when none was given.
    pub fn bound_on(&self, lo: f64, hi: f64) -> f64 {
        self.bound.unwrap_or_else(|| self.f.sup_abs(lo, hi))
    }
}

impl From<ScalarFn> for Factor {
    fn from(f: ScalarFn) -> Self {
        Factor::new(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fns() -> Vec<ScalarFn> {
        vec![
            ScalarFn::Constant { value: 0.7 },
            ScalarFn::LinearCapped {
                intercept: 1.0,
                slope: -0.3,
                cap: 2.0,
            },
            ScalarFn::ExpDecay { level: 2.0, rate: 0.8 },
            ScalarFn::LogisticConcave { scale: 0.5, rate: 1.5 },
        ]
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for f in fns() {
            for k in 0..50 {
                let x = 0.137 + 0.1 * k as f64;
                let h = 1e-6;
                let fd = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
                assert!((fd - f.derivative(x)).abs() < 1e-7, "{f:?} at {x}");
            }
        }
    }

    #[test]
    fn sup_bounds_dominate_samples() {
        for f in fns() {
            let s = f.sup_abs(0.0, 5.0);
            let d = f.sup_abs_derivative(0.0, 5.0);
            for k in 0..=500 {
                let x = 5.0 * k as f64 / 500.0;
                assert!(f.value(x).abs() <= s + 1e-15);
                assert!(f.derivative(x).abs() <= d + 1e-15);
            }
        }
    }

    #[test]
    fn logistic_is_zero_at_origin_and_below_tangent() {
        let h = ScalarFn::LogisticConcave { scale: 0.2, rate: 1.0 };
        assert_eq!(h.value(0.0), 0.0);
        let slope = h.derivative(0.0);
        assert!((slope - 0.1).abs() < 1e-15);
        for k in 0..100 {
            let x = 0.05 * k as f64;
            assert!(h.value(x) <= slope * x + 1e-15);
        }
    }

    #[test]
    fn factor_deserializes_from_named_table() {
        let f: Factor = toml::from_str("name = \"exp_decay\"\nlevel = 1.0\nrate = 2.0\nbound = 1.0\n").unwrap();
        assert_eq!(f, Factor::bounded(ScalarFn::ExpDecay { level: 1.0, rate: 2.0 }, 1.0));
        let bad: std::result::Result<Factor, _> = toml::from_str("name = \"cubic\"\nvalue = 1.0\n");
        assert!(bad.is_err());
    }
}
