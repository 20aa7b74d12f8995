mod common;

use cdo_hjmm::hjmm::HjmmModel;
use cdo_hjmm::levy::LevyTriplet;
use cdo_hjmm::market::LossPath;
use cdo_hjmm::verify::{audit_positivity_monotonicity, solve_batch};
use cdo_hjmm::volatility::VolatilitySpec;
use cdo_hjmm::{Error, Verdict};
use common::*;

#[test]
fn zero_volatility_is_pure_transport() {
    let g = grid(0.05, 3.0, 2);
    let m = HjmmModel::new(atoms(&[(0.5, 1.0)]), VolatilitySpec::zero(2).unwrap(), g.clone(), 1e-3).unwrap();
    let r0 = g.surface(|z, i| z + i as f64).unwrap();
    let steps = 12;
    let res = m.solve_path(&r0, &LossPath::zero(), steps as f64 * g.dz, &[], 3).unwrap();
    let shifted = r0.shift(steps).unwrap();
    let last = g.n_z - 1;
    for k in 0..=(last - steps) {
        for i in 0..2 {
            // Bit-identical on the retained cells.
            assert_eq!(res.final_surface.get(k, i), shifted.get(k, i));
            assert_eq!(res.final_surface.get(k, i), r0.get(k + steps, i));
        }
    }
    // Past the grid the last value is repeated.
    assert_eq!(res.final_surface.get(last, 0), r0.get(last, 0));
}

#[test]
fn linear_curve_moves_up_by_elapsed_time() {
    let g = grid(0.125, 4.0, 1);
    let m = HjmmModel::new(LevyTriplet::wiener(), VolatilitySpec::zero(1).unwrap(), g.clone(), 1e-3).unwrap();
    let r0 = g.surface(|z, _| z).unwrap();
    let res = m.solve_path(&r0, &LossPath::zero(), 1.0, &[0.5], 0).unwrap();
    let (t, snap) = &res.snapshots[0];
    assert_eq!(*t, 0.5);
    for k in 0..(g.n_z - 8) {
        assert_eq!(res.final_surface.get(k, 0), g.dz * k as f64 + 1.0);
        assert_eq!(snap.get(k, 0), g.dz * k as f64 + 0.5);
    }
}

#[test]
fn constant_curve_stays_constant() {
    let g = grid(0.1, 2.0, 3);
    let m = HjmmModel::new(subordinator(), VolatilitySpec::zero(3).unwrap(), g.clone(), 1e-3).unwrap();
    let r0 = g.surface(|_, _| 0.04).unwrap();
    let res = m.solve_path(&r0, &LossPath::zero(), 2.0, &[], 11).unwrap();
    assert!(res.final_surface.values().iter().all(|&v| v == 0.04));
}

#[test]
fn constant_volatility_matches_closed_form() {
    let (dz, z_max, sigma) = (1e-2, 10.0, 0.1);
    let g = grid(dz, z_max, 1);
    let m = HjmmModel::new(LevyTriplet::wiener(), VolatilitySpec::constant(1, sigma).unwrap(), g.clone(), 1e-3).unwrap();
    let r0f = |z: f64| 0.03 + 0.02 * z * (-0.5 * z).exp();
    let r0 = g.surface(|z, _| r0f(z)).unwrap();
    let seed = 2024;
    let steps = 100;
    let noise = m.triplet().simulate_increments(dz, steps, m.eps(), seed).unwrap();
    let w: f64 = noise.increments.iter().sum();
    let res = m.solve_path(&r0, &LossPath::zero(), 1.0, &[], seed).unwrap();
    let t = 1.0;
    let tol = 5.0 * dz * sigma * sigma * (1.0 + z_max);
    let mut worst: f64 = 0.0;
    for k in 0..(g.n_z - steps) {
        let z = k as f64 * dz;
        let exact = r0f(z + t) + sigma * sigma * (z * t + 0.5 * t * t) + sigma * w;
        worst = worst.max((res.final_surface.get(k, 0) - exact).abs());
    }
    assert!(worst <= tol, "max error {worst} > {tol}");
}

#[test]
fn single_rating_is_the_default_free_case() {
    let g = grid(0.05, 2.0, 1);
    let m = HjmmModel::new(subordinator(), example_family(1), g.clone(), 1e-3).unwrap();
    let res = m.solve_path(&ordered_r0(&g), &LossPath::zero(), 1.0, &[], 5).unwrap();
    assert_eq!(res.short_end.len(), 21);
    assert!(res.min_gap.value.is_infinite());
    assert!(res.min_r.value >= 0.0);
}

#[test]
fn paths_are_reproducible() {
    let g = grid(0.05, 2.0, 3);
    let m = HjmmModel::new(subordinator(), example_family(3), g.clone(), 1e-3).unwrap();
    let r0 = ordered_r0(&g);
    let a = m.solve_path(&r0, &LossPath::zero(), 1.0, &[0.5], 99).unwrap();
    let b = m.solve_path(&r0, &LossPath::zero(), 1.0, &[0.5], 99).unwrap();
    assert_eq!(a.final_surface, b.final_surface);
    assert_eq!(a.short_end, b.short_end);
    let c = m.solve_path(&r0, &LossPath::zero(), 1.0, &[0.5], 100).unwrap();
    assert_ne!(a.final_surface, c.final_surface);
}

#[test]
fn horizon_off_the_time_grid_is_rejected() {
    let g = grid(0.1, 2.0, 1);
    let m = HjmmModel::new(LevyTriplet::wiener(), VolatilitySpec::zero(1).unwrap(), g.clone(), 1e-3).unwrap();
    let r0 = g.surface(|_, _| 0.0).unwrap();
    assert!(m.solve_path(&r0, &LossPath::zero(), 0.95, &[], 0).is_err());
    assert!(m.solve_path(&r0, &LossPath::zero(), 1.0, &[0.33], 0).is_err());
}

#[test]
fn step_errors_carry_the_time() {
    // J'(x) = 800 e^{800 x} overflows once ∫ g exceeds ~0.89.
    let g = grid(0.1, 2.0, 1);
    let spec = VolatilitySpec::custom(1, "grows", |_, t, _, _, _| if t > 0.25 { 1.0 } else { 0.0 }).unwrap();
    let m = HjmmModel::new(atoms(&[(-800.0, 1.0)]), spec, g.clone(), 1e-3).unwrap();
    let r0 = g.surface(|_, _| 0.0).unwrap();
    let err = m.solve_path(&r0, &LossPath::zero(), 1.0, &[], 0).unwrap_err();
    match err {
        Error::Step { t, source } => {
            assert!((t - 0.3).abs() < 1e-12);
            assert!(matches!(*source, Error::DriftDomain { rating: 0, .. }));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn certified_family_preserves_positivity_and_order() {
    let g = grid(0.02, 4.0, 3);
    let m = HjmmModel::new(subordinator(), example_family(3), g.clone(), 1e-3).unwrap();
    let batch = solve_batch(&m, &ordered_r0(&g), 1.0, 100, 17).unwrap();
    let audit = audit_positivity_monotonicity(&batch, 1e-6);
    assert_eq!(audit.positivity, Verdict::Pass, "{audit:?}");
    assert_eq!(audit.monotonicity, Verdict::Pass, "{audit:?}");
    assert_eq!(audit.short_end_monotonicity, Verdict::Pass, "{audit:?}");
    // The jumps actually moved the surface.
    assert!(audit.max_abs_r > 0.04);
}

#[test]
fn m2_violation_breaks_the_ordering() {
    let g = grid(0.05, 2.0, 3);
    let spec = separable_linear(&[0.5, 1.5, 1.5]);
    let m = HjmmModel::new(atoms(&[(1.0, 1.0)]), spec, g.clone(), 1e-3).unwrap();
    let r0 = g.surface(|_, i| 0.051 - 0.001 * i as f64).unwrap();
    let batch = solve_batch(&m, &r0, 1.0, 100, 5).unwrap();
    let audit = audit_positivity_monotonicity(&batch, 1e-6);
    assert_eq!(audit.monotonicity, Verdict::Fail);
    let worst = audit.min_gap.unwrap();
    assert!(worst.at.value < -10.0 * audit.tolerance);
    assert_eq!(worst.at.rating, 0);
    let path = &batch[worst.path];
    assert_eq!(path.min_gap, worst.at);
    assert_eq!(audit.positivity, Verdict::Pass);
}

#[test]
fn zero_volatility_audit_is_exact() {
    let g = grid(0.1, 2.0, 3);
    let m = HjmmModel::new(LevyTriplet::wiener(), VolatilitySpec::zero(3).unwrap(), g.clone(), 1e-3).unwrap();
    let batch = solve_batch(&m, &ordered_r0(&g), 1.0, 4, 0).unwrap();
    let audit = audit_positivity_monotonicity(&batch, 0.0);
    assert!(audit.min_r.unwrap().at.value >= 0.0);
    assert!(audit.min_gap.unwrap().at.value >= 0.0);
    assert_eq!(audit.verdict(), Verdict::Pass);
}
