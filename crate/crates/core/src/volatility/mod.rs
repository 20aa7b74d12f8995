//! Volatility families `g_i(t, z, l, r)` and their numerical certification.
//!
//! `g_i` is the volatility of the forward curve of rating `x_i` at calendar
//! time `t`, time to maturity `z`, loss level `l` and local curve values
//! `r = (r(z, x_1), ..., r(z, x_n))`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

pub mod certify;
pub mod functions;
pub mod regularity;

pub use certify::{
    check_derivative_conditions, check_m1_m2, check_p1_p2, CertificationReport, ConditionResult,
    SamplingBoxes, Witness,
};
pub use functions::{Factor, ScalarFn};
pub use regularity::{estimate_regularity_constants, RegularityReport};

type Callback = dyn Fn(usize, f64, f64, f64, &[f64]) -> f64 + Send + Sync;

/// Shape of a volatility family.
#[derive(Clone)]
pub enum VolatilityKind {
    /// `g_i = f1(t) f2(z) f3(l) h_1(r_1)···h_n(r_n) h(r_i)`.
    Multiplicative {
        f1: Factor,
        f2: Factor,
        f3: Factor,
        h_list: Vec<Factor>,
        h: Factor,
        /// Declared bound on `h′`.
        h_prime_bound: Option<f64>,
    },
    /// `g_i = f1(t) f2(z) f3(l) φ_i(r_i)`: each curve driven by its own level.
    Separable {
        f1: Factor,
        f2: Factor,
        f3: Factor,
        phi: Vec<Factor>,
    },
    /// Arbitrary deterministic callback `g(i, t, z, l, r)`.
    Custom { name: String, g: Arc<Callback> },
}

impl fmt::Debug for VolatilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VolatilityKind::Multiplicative {
                f1,
                f2,
                f3,
                h_list,
                h,
                h_prime_bound,
            } => f
                .debug_struct("Multiplicative")
                .field("f1", f1)
                .field("f2", f2)
                .field("f3", f3)
                .field("h_list", h_list)
                .field("h", h)
                .field("h_prime_bound", h_prime_bound)
                .finish(),
            VolatilityKind::Separable { f1, f2, f3, phi } => f
                .debug_struct("Separable")
                .field("f1", f1)
                .field("f2", f2)
                .field("f3", f3)
                .field("phi", phi)
                .finish(),
            VolatilityKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// A volatility family for a ladder of `n` ratings.
#[derive(Debug, Clone)]
pub struct VolatilitySpec {
    n: usize,
    kind: VolatilityKind,
}

/// Serializable description of a spec (the callback of a custom kind is
/// reported by name only).
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecSummary {
    Multiplicative {
        f1: Factor,
        f2: Factor,
        f3: Factor,
        h_list: Vec<Factor>,
        h: Factor,
        h_prime_bound: Option<f64>,
    },
    Separable {
        f1: Factor,
        f2: Factor,
        f3: Factor,
        phi: Vec<Factor>,
    },
    Custom {
        name: String,
    },
}

impl VolatilitySpec {
    pub fn multiplicative(
        f1: Factor,
        f2: Factor,
        f3: Factor,
        h_list: Vec<Factor>,
        h: Factor,
        h_prime_bound: Option<f64>,
    ) -> Result<Self> {
        if h_list.is_empty() {
            return Err(Error::InvalidInput("multiplicative family needs h_1..h_n".into()));
        }
        for fac in [&f1, &f2, &f3, &h].into_iter().chain(h_list.iter()) {
            fac.f.validate()?;
        }
        if h.value(0.0) != 0.0 {
            return Err(Error::InvalidInput(format!(
                "multiplicative family needs h(0) = 0, got {}",
                h.value(0.0)
            )));
        }
        Ok(Self {
            n: h_list.len(),
            kind: VolatilityKind::Multiplicative {
                f1,
                f2,
                f3,
                h_list,
                h,
                h_prime_bound,
            },
        })
    }

    pub fn separable(f1: Factor, f2: Factor, f3: Factor, phi: Vec<Factor>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::InvalidInput("separable family needs φ_1..φ_n".into()));
        }
        for fac in [&f1, &f2, &f3].into_iter().chain(phi.iter()) {
            fac.f.validate()?;
        }
        Ok(Self {
            n: phi.len(),
            kind: VolatilityKind::Separable { f1, f2, f3, phi },
        })
    }

    /// `g_i ≡ σ` for every rating.
    pub fn constant(n: usize, sigma: f64) -> Result<Self> {
        let c = Factor::bounded(ScalarFn::Constant { value: sigma }, sigma.abs());
        Self::separable(Factor::one(), Factor::one(), Factor::one(), vec![c; n])
    }

    /// `g ≡ 0`.
    pub fn zero(n: usize) -> Result<Self> {
        Self::constant(n, 0.0)
    }

    pub fn custom(
        n: usize,
        name: impl Into<String>,
        g: impl Fn(usize, f64, f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("volatility family needs at least one rating".into()));
        }
        Ok(Self {
            n,
            kind: VolatilityKind::Custom {
                name: name.into(),
                g: Arc::new(g),
            },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &VolatilityKind {
        &self.kind
    }

    pub fn summary(&self) -> SpecSummary {
        match &self.kind {
            VolatilityKind::Multiplicative {
                f1,
                f2,
                f3,
                h_list,
                h,
                h_prime_bound,
            } => SpecSummary::Multiplicative {
                f1: *f1,
                f2: *f2,
                f3: *f3,
                h_list: h_list.clone(),
                h: *h,
                h_prime_bound: *h_prime_bound,
            },
            VolatilityKind::Separable { f1, f2, f3, phi } => SpecSummary::Separable {
                f1: *f1,
                f2: *f2,
                f3: *f3,
                phi: phi.clone(),
            },
            VolatilityKind::Custom { name, .. } => SpecSummary::Custom { name: name.clone() },
        }
    }

    /// True when `g` vanishes identically (the library zero constant).
    pub fn is_identically_zero(&self) -> bool {
        let zero = |f: &Factor| matches!(f.f, ScalarFn::Constant { value } if value == 0.0);
        match &self.kind {
            VolatilityKind::Multiplicative { f1, f2, f3, h_list, h, .. } => {
                zero(f1) || zero(f2) || zero(f3) || zero(h) || h_list.iter().any(zero)
            }
            VolatilityKind::Separable { f1, f2, f3, phi } => {
                zero(f1) || zero(f2) || zero(f3) || phi.iter().all(zero)
            }
            VolatilityKind::Custom { .. } => false,
        }
    }

    /// `g_i(t, z, l, r)`.
    pub fn eval_g(&self, i: usize, t: f64, z: f64, l: f64, r: &[f64]) -> Result<f64> {
        if i >= self.n {
            return Err(Error::RatingIndex { index: i, len: self.n });
        }
        if r.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "r has length {} for {} ratings",
                r.len(),
                self.n
            )));
        }
        Ok(self.g_unchecked(i, t, z, l, r))
    }

    #[inline]
    pub(crate) fn g_unchecked(&self, i: usize, t: f64, z: f64, l: f64, r: &[f64]) -> f64 {
        match &self.kind {
            VolatilityKind::Multiplicative {
                f1,
                f2,
                f3,
                h_list,
                h,
                ..
            } => {
                let mut c = f1.value(t) * f2.value(z) * f3.value(l);
                for (hj, &rj) in h_list.iter().zip(r) {
                    c *= hj.value(rj);
                }
                c * h.value(r[i])
            }
            VolatilityKind::Separable { f1, f2, f3, phi } => {
                f1.value(t) * f2.value(z) * f3.value(l) * phi[i].value(r[i])
            }
            VolatilityKind::Custom { g, .. } => g(i, t, z, l, r),
        }
    }

    /// All `g_i` at one point, written into `out` (length `n`).
    #[inline]
    pub fn eval_all(&self, t: f64, z: f64, l: f64, r: &[f64], out: &mut [f64]) {
        match &self.kind {
            VolatilityKind::Multiplicative {
                f1,
                f2,
                f3,
                h_list,
                h,
                ..
            } => {
                let mut c = f1.value(t) * f2.value(z) * f3.value(l);
                for (hj, &rj) in h_list.iter().zip(r) {
                    c *= hj.value(rj);
                }
                for (o, &ri) in out.iter_mut().zip(r) {
                    *o = c * h.value(ri);
                }
            }
            VolatilityKind::Separable { f1, f2, f3, phi } => {
                let c = f1.value(t) * f2.value(z) * f3.value(l);
                for ((o, p), &ri) in out.iter_mut().zip(phi).zip(r) {
                    *o = c * p.value(ri);
                }
            }
            VolatilityKind::Custom { g, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = g(i, t, z, l, r);
                }
            }
        }
    }

    /// `f̄1 f̄2 f̄3 Π h̄_j h̄` (multiplicative) or `f̄1 f̄2 f̄3 max φ̄_i`
    /// (separable) from the declared bounds; `None` when a bound is missing
    /// or the kind is custom.
    pub fn declared_sup(&self) -> Option<f64> {
        match &self.kind {
            VolatilityKind::Multiplicative {
                f1,
                f2,
                f3,
                h_list,
                h,
                ..
            } => {
                let mut p = f1.bound? * f2.bound? * f3.bound? * h.bound?;
                for hj in h_list {
                    p *= hj.bound?;
                }
                Some(p)
            }
            VolatilityKind::Separable { f1, f2, f3, phi } => {
                let mut m: f64 = 0.0;
                for p in phi {
                    m = m.max(p.bound?);
                }
                Some(f1.bound? * f2.bound? * f3.bound? * m)
            }
            VolatilityKind::Custom { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(n: usize) -> VolatilitySpec {
        VolatilitySpec::multiplicative(
            Factor::one(),
            Factor::bounded(ScalarFn::ExpDecay { level: 1.0, rate: 1.0 }, 1.0),
            Factor::one(),
            vec![
                Factor::bounded(
                    ScalarFn::LinearCapped {
                        intercept: 1.0,
                        slope: -0.05,
                        cap: 2.0
                    },
                    1.0
                );
                n
            ],
            Factor::bounded(ScalarFn::LogisticConcave { scale: 0.2, rate: 1.0 }, 0.2),
            Some(0.1),
        )
        .unwrap()
    }

    #[test]
    fn multiplicative_vanishes_at_zero_level() {
        let s = example(3);
        assert_eq!(s.eval_g(1, 0.3, 0.7, 0.5, &[0.2, 0.0, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn product_of_ones() {
        let one = Factor::one();
        let id = Factor::new(ScalarFn::LinearCapped {
            intercept: 0.0,
            slope: 1.0,
            cap: f64::INFINITY,
        });
        let s = VolatilitySpec::multiplicative(one, one, one, vec![one; 3], id, None).unwrap();
        assert_eq!(s.eval_g(0, 0.0, 0.0, 0.0, &[2.0, 3.0, 4.0]).unwrap(), 2.0);
    }

    #[test]
    fn constant_custom_callback() {
        let s = VolatilitySpec::custom(2, "sigma", |_, _, _, _, _| 0.1).unwrap();
        for i in 0..2 {
            assert_eq!(s.eval_g(i, 1.0, 2.0, 0.5, &[1.0, 7.0]).unwrap(), 0.1);
        }
    }

    #[test]
    fn index_and_length_errors() {
        let s = example(2);
        assert!(matches!(s.eval_g(2, 0.0, 0.0, 0.0, &[0.0, 0.0]), Err(Error::RatingIndex { .. })));
        assert!(s.eval_g(0, 0.0, 0.0, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn eval_all_matches_eval_g() {
        let s = example(3);
        let r = [0.3, 0.2, 0.1];
        let mut out = [0.0; 3];
        s.eval_all(0.5, 1.5, 0.25, &r, &mut out);
        for i in 0..3 {
            assert_eq!(out[i], s.eval_g(i, 0.5, 1.5, 0.25, &r).unwrap());
        }
    }

    #[test]
    fn declared_sup_is_product_of_bounds() {
        assert!((example(3).declared_sup().unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(VolatilitySpec::constant(2, 0.1).unwrap().declared_sup(), Some(0.1));
    }

    #[test]
    fn multiplicative_rejects_nonzero_h0() {
        let one = Factor::one();
        assert!(VolatilitySpec::multiplicative(one, one, one, vec![one], one, None).is_err());
    }
}
