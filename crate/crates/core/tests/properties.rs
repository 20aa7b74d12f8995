mod common;

use cdo_hjmm::hjmm::HjmmModel;
use cdo_hjmm::levy::{Atom, LevyMeasure, LevyTriplet};
use cdo_hjmm::market::{bond_prices, LossPath};
use cdo_hjmm::statespace::{ForwardSurface, RatingLadder};
use cdo_hjmm::verify::{price_monotonicity_audit, PRICE_TOLERANCE};
use cdo_hjmm::volatility::VolatilitySpec;
use common::grid;
use ndarray::Array2;
use proptest::prelude::*;

fn atom_triplet() -> impl Strategy<Value = (f64, f64, Vec<(f64, f64)>)> {
    let atom = (prop_oneof![-3.0..-0.05f64, 0.05..3.0f64], 0.01..2.0f64);
    (-1.0..1.0f64, 0.0..2.0f64, prop::collection::vec(atom, 0..4))
}

fn build((a, q, atoms): &(f64, f64, Vec<(f64, f64)>)) -> LevyTriplet {
    let atoms = atoms
        .iter()
        .map(|&(location, mass)| Atom { location, mass })
        .collect();
    LevyTriplet::new(*a, *q, LevyMeasure::atoms_only(atoms).unwrap()).unwrap()
}

fn closed_form((a, q, atoms): &(f64, f64, Vec<(f64, f64)>), z: f64) -> f64 {
    let mut j = -a * z + 0.5 * q * z * z;
    for &(y, m) in atoms {
        let comp = if y.abs() < 1.0 { z * y } else { 0.0 };
        j += m * ((-z * y).exp() - 1.0 + comp);
    }
    j
}

/// A smooth random surface: sums of damped cosines per rating.
fn smooth_surface() -> impl Strategy<Value = ForwardSurface> {
    let coeffs = prop::collection::vec((-1.0..1.0f64, 0.2..3.0f64, 0.0..1.5f64), 1..4);
    (prop::collection::vec(coeffs, 1..4), 0.2..2.0f64).prop_map(|(per_rating, gamma)| {
        let n = per_rating.len();
        let ladder = RatingLadder::uniform(n).unwrap();
        ForwardSurface::from_fn(0.05, 161, gamma, ladder, |z, i| {
            per_rating[i]
                .iter()
                .map(|&(c, w, d)| c * (w * z).cos() * (-(d + gamma) * z).exp())
                .sum()
        })
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponent_vanishes_at_zero(t in atom_triplet()) {
        prop_assert_eq!(build(&t).laplace_exponent(0.0).unwrap(), 0.0);
    }

    #[test]
    fn atom_exponent_matches_closed_form(t in atom_triplet(), z in 0.0..5.0f64) {
        let want = closed_form(&t, z);
        let got = build(&t).laplace_exponent(z).unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-3), "{} vs {}", got, want);
    }

    #[test]
    fn exponent_is_convex(t in atom_triplet(), z in 0.0..3.0f64) {
        prop_assert!(build(&t).laplace_derivative(z, 2).unwrap() >= 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences(t in atom_triplet(), z in 0.1..3.0f64) {
        let tr = build(&t);
        let h = 1e-4;
        let j = |x: f64| closed_form(&t, x);
        let fd1 = (j(z + h) - j(z - h)) / (2.0 * h);
        let d1 = tr.laplace_derivative(z, 1).unwrap();
        prop_assert!((fd1 - d1).abs() <= 1e-5 * d1.abs().max(1e-2), "J' {} vs {}", d1, fd1);
        let d1f = |x: f64| tr.laplace_derivative(x, 1).unwrap();
        let fd2 = (d1f(z + h) - d1f(z - h)) / (2.0 * h);
        let d2 = tr.laplace_derivative(z, 2).unwrap();
        prop_assert!((fd2 - d2).abs() <= 1e-5 * d2.abs().max(1e-2), "J'' {} vs {}", d2, fd2);
    }

    #[test]
    fn subordinator_exponent_derivative_is_nondecreasing(
        a in 0.0..1.0f64,
        atoms in prop::collection::vec((0.05..3.0f64, 0.01..2.0f64), 1..4),
        z in 0.0..4.0f64,
    ) {
        // Keep the drift left after compensation nonnegative.
        let small: f64 = atoms.iter().filter(|x| x.0 < 1.0).map(|x| x.0 * x.1).sum();
        let tr = build(&(a + small, 0.0, atoms));
        prop_assert!(tr.is_subordinator());
        let d = |x: f64| tr.laplace_derivative(x, 1).unwrap();
        prop_assert!(d(z + 0.1) >= d(z));
    }

    #[test]
    fn shifts_compose(s in smooth_surface(), a in 0usize..40, b in 0usize..40) {
        let ab = s.shift(a).unwrap().shift(b).unwrap();
        prop_assert_eq!(ab, s.shift(a + b).unwrap());
    }

    #[test]
    fn norms_are_homogeneous(s in smooth_surface(), c in -3.0..3.0f64) {
        let scaled = s.with_values(s.values() * c).unwrap();
        for i in 0..s.ladder().len() {
            let (n0, n1) = (s.norm_l2gamma(i).unwrap(), scaled.norm_l2gamma(i).unwrap());
            prop_assert!((n1 - c.abs() * n0).abs() <= 1e-12 * n0.max(1e-300));
            let (h0, h1) = (s.norm_h1gamma(i).unwrap(), scaled.norm_h1gamma(i).unwrap());
            prop_assert!((h1 - c.abs() * h0).abs() <= 1e-12 * h0.max(1e-300));
            prop_assert!(h0 >= n0);
        }
    }

    #[test]
    fn smoothed_surfaces_satisfy_the_embedding(s in smooth_surface()) {
        let rep = s.sup_embedding_check();
        prop_assert!(rep.pass, "{:?}", rep);
    }

    #[test]
    fn zero_volatility_transport_is_exact(s in smooth_surface(), steps in 1usize..30) {
        let n = s.ladder().len();
        let g = grid(0.05, 8.0, n);
        let s = ForwardSurface::new(g.dz, g.gamma, g.ladder.clone(), s.values().clone()).unwrap();
        let m = HjmmModel::new(LevyTriplet::wiener(), VolatilitySpec::zero(n).unwrap(), g, 1e-3).unwrap();
        let out = m.solve_path(&s, &LossPath::zero(), steps as f64 * 0.05, &[], 0).unwrap();
        prop_assert_eq!(out.final_surface, s.shift(steps).unwrap());
    }

    #[test]
    fn positive_surfaces_price_decreasing_in_maturity(
        vals in prop::collection::vec(0.0..0.2f64, 41 * 2),
        t in 0.0..1.0f64,
    ) {
        let s = ForwardSurface::new(0.05, 1.0, RatingLadder::uniform(2).unwrap(), Array2::from_shape_vec((41, 2), vals).unwrap()).unwrap();
        let mats: Vec<f64> = (0..8).map(|k| t + 0.25 * k as f64).collect();
        let grid = bond_prices(&s, 0.0, t, &mats, 1.0).unwrap();
        prop_assert!(grid.prices.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let audit = price_monotonicity_audit(&[grid], PRICE_TOLERANCE);
        prop_assert!(audit.maturity_violation.unwrap().value <= PRICE_TOLERANCE);
    }
}
