#![allow(dead_code)]

use cdo_hjmm::levy::{Atom, Density, LevyMeasure, LevyTriplet};
use cdo_hjmm::hjmm::Grid;
use cdo_hjmm::statespace::{ForwardSurface, RatingLadder};
use cdo_hjmm::volatility::{Factor, SamplingBoxes, ScalarFn, VolatilitySpec};

/// Multiplicative family with f1 = f3 = 1, f2 = e^{-z}, h_i = 1 - 0.05 r,
/// h = 0.2 tanh(r / 2).
pub fn example_family(n: usize) -> VolatilitySpec {
    VolatilitySpec::multiplicative(
        Factor::one(),
        Factor::bounded(ScalarFn::ExpDecay { level: 1.0, rate: 1.0 }, 1.0),
        Factor::one(),
        vec![
            Factor::bounded(
                ScalarFn::LinearCapped {
                    intercept: 1.0,
                    slope: -0.05,
                    cap: 2.0,
                },
                1.0,
            );
            n
        ],
        Factor::bounded(ScalarFn::LogisticConcave { scale: 0.2, rate: 1.0 }, 0.2),
        Some(0.1),
    )
    .unwrap()
}

/// Subordinator: ν(dy) = 2 e^{-3y} dy on (0, ∞), a = 0.5, q = 0.
pub fn subordinator() -> LevyTriplet {
    let nu = LevyMeasure::new(vec![], Some(Density::exp_tilted(2.0, 3.0))).unwrap();
    LevyTriplet::new(0.5, 0.0, nu).unwrap()
}

pub fn atoms(list: &[(f64, f64)]) -> LevyTriplet {
    let atoms = list
        .iter()
        .map(|&(location, mass)| Atom { location, mass })
        .collect();
    LevyTriplet::new(0.0, 0.0, LevyMeasure::atoms_only(atoms).unwrap()).unwrap()
}

/// g_i = c_i r_i on r ≥ 0.
pub fn separable_linear(c: &[f64]) -> VolatilitySpec {
    let phi = c
        .iter()
        .map(|&slope| {
            Factor::new(ScalarFn::LinearCapped {
                intercept: 0.0,
                slope,
                cap: f64::INFINITY,
            })
        })
        .collect();
    VolatilitySpec::separable(Factor::one(), Factor::one(), Factor::one(), phi).unwrap()
}

pub fn boxes(n: usize) -> SamplingBoxes {
    let ladder = RatingLadder::uniform(n).unwrap();
    SamplingBoxes::new(2.0, &ladder, 7)
}

pub fn grid(dz: f64, z_max: f64, n: usize) -> Grid {
    Grid::new(dz, z_max, 1.0, RatingLadder::uniform(n).unwrap()).unwrap()
}

/// Positive, strictly ordered across ratings, smooth in z.
pub fn ordered_r0(g: &Grid) -> ForwardSurface {
    let n = g.ladder.len();
    g.surface(|z, i| 0.02 + 0.01 * (n - 1 - i) as f64 + 0.01 * (1.0 - (-z).exp()))
        .unwrap()
}
