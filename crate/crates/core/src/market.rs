//! Loss process, intensities and bond prices read off the forward surface.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjmm::{snapshot_steps, HjmmModel, PathRecorder, ScenarioResult};
use crate::seed::derive_seed;
use crate::statespace::{ForwardSurface, RatingLadder};

/// Nondecreasing pure-jump loss path started at `L_0 = 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossPath {
    jump_times: Vec<f64>,
    levels: Vec<f64>,
}

impl LossPath {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(jump_times: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if jump_times.len() != levels.len() {
            return Err(Error::InvalidInput("jump times and levels differ in length".into()));
        }
        if jump_times.windows(2).any(|w| !(w[1] > w[0])) || jump_times.first().is_some_and(|&t| !(t > 0.0)) {
            return Err(Error::InvalidInput("jump times must be positive and increasing".into()));
        }
        let mut prev = 0.0;
        for &l in &levels {
            if !(l >= prev) || l > 1.0 {
                return Err(Error::InvalidInput(format!("loss levels must be nondecreasing in [0, 1], got {l}")));
            }
            prev = l;
        }
        Ok(Self { jump_times, levels })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// `L_t`, right-continuous.
    pub fn level_at(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.levels[k - 1]
        }
    }

    /// `L_{t-}`.
    pub fn level_before(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s < t);
        if k == 0 {
            0.0
        } else {
            self.levels[k - 1]
        }
    }

    fn push(&mut self, t: f64, level: f64) {
        self.jump_times.push(t);
        self.levels.push(level);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["jump_time", "new_level"])?;
        for (t, l) in self.jump_times.iter().zip(&self.levels) {
            wr.write_record([t.to_string(), l.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `λ(t, x_i) = r(t, 0, x_i) - r(t, 0, x_n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Intensity {
    pub lambda: Vec<f64>,
    /// Ratings with `λ_i < 0`.
    pub negative: Vec<usize>,
}

pub fn intensity(short_end: &[f64]) -> Intensity {
    let top = *short_end.last().unwrap_or(&0.0);
    let lambda: Vec<f64> = short_end.iter().map(|r| r - top).collect();
    let negative = lambda
        .iter()
        .enumerate()
        .filter(|(_, &l)| l < 0.0)
        .map(|(i, _)| i)
        .collect();
    Intensity { lambda, negative }
}

/// Decrements below this multiple of the largest short rate count as rounding.
const DECREMENT_NOISE: f64 = 1e-12;

/// Lowest rating still alive at loss level `l`.
fn lowest_alive(ladder: &RatingLadder, l: f64) -> usize {
    ladder.xs().partition_point(|&x| x < l)
}

/// Jump kernel at loss level `l`: total hazard and the candidate new levels
/// `x_j` with weights `λ_{j-1} - λ_j`.
fn jump_kernel(ladder: &RatingLadder, lambda: &[f64], l: f64, t: f64, scale: f64) -> Result<(f64, Vec<(usize, f64)>)> {
    let a = lowest_alive(ladder, l);
    let n = lambda.len();
    let mut weights = Vec::with_capacity(n.saturating_sub(a + 1));
    for j in (a + 1)..n {
        let d = lambda[j - 1] - lambda[j];
        if d < -DECREMENT_NOISE * scale {
            return Err(Error::ModelInconsistency {
                t,
                rating: j - 1,
                decrement: d,
            });
        }
        weights.push((j, d.max(0.0)));
    }
    let hazard = weights.iter().map(|w| w.1).sum();
    Ok((hazard, weights))
}

/// Horizon, output times and maturities of a coupled run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathPlan {
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    /// Times at which price grids are computed.
    pub price_times: Vec<f64>,
    pub maturities: Vec<f64>,
}

/// A coupled surface and loss path.
#[derive(Debug, Clone)]
pub struct CoupledPath {
    pub scenario: ScenarioResult,
    pub loss: LossPath,
    /// `e^{-∫_0^{t_m} r(s, 0, 1) ds}` at every step time, trapezoid in `s`
    /// so that it matches the maturity integrals of the prices.
    pub discount: Vec<f64>,
    pub prices: Vec<PriceGrid>,
}

/// Simulates the loss process together with the surface.
///
/// Within each step the hazard `λ(t, x_a)` of the lowest alive rating is
/// frozen at the step start; the first arrival time is exact for that hazard,
/// and a jump moves `L` to `x_j` (j > a) with probability proportional to
/// `λ_{j-1} - λ_j`. The surface step uses the level at the step start.
pub fn simulate_loss(model: &HjmmModel, r0: &ForwardSurface, plan: &PathPlan, seed: u64) -> Result<CoupledPath> {
    let dt = model.dt();
    let n_steps = model.steps_for(plan.horizon)?;
    let snaps = snapshot_steps(&plan.snapshot_times, dt, n_steps)?;
    let price_steps = snapshot_steps(&plan.price_times, dt, n_steps)?;
    let noise = model.triplet().simulate_increments(dt, n_steps, model.eps(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let ladder = r0.ladder().clone();
    let n = ladder.len();

    let mut rec = PathRecorder::new(r0, &snaps);
    let mut loss = LossPath::zero();
    let mut l = 0.0;
    let mut log_discount: f64 = 0.0;
    let mut discount = Vec::with_capacity(n_steps + 1);
    let mut prices = Vec::new();
    let mut surface = r0.clone();
    for m in 0..=n_steps {
        let t = m as f64 * dt;
        discount.push(log_discount.exp());
        for _ in price_steps.iter().filter(|&&s| s == m) {
            prices.push(bond_prices(&surface, l, t, &plan.maturities, log_discount.exp())?);
        }
        if m == n_steps {
            break;
        }
        let short = surface.short_end();
        let lam = intensity(&short);
        let scale = short.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let (hazard, weights) = jump_kernel(&ladder, &lam.lambda, l, t, scale)?;
        let step_level = l;
        if hazard > 0.0 {
            let wait: f64 = Exp1.sample(&mut rng);
            let tau = t + wait / hazard;
            if tau <= t + dt {
                let mut u = rng.random::<f64>() * hazard;
                let mut j = weights.last().map(|w| w.0).unwrap_or(n - 1);
                for &(cand, w) in &weights {
                    if u < w {
                        j = cand;
                        break;
                    }
                    u -= w;
                }
                l = ladder.x(j);
                loss.push(tau.min(t + dt), l);
            }
        }
        let jumps = &noise.jumps[m];
        let continuous = noise.increments[m] - jumps.iter().sum::<f64>();
        surface = model.step(t, step_level, &surface, continuous, jumps)?;
        log_discount -= 0.5 * (short[n - 1] + surface.get(0, n - 1)) * dt;
        rec.record(m + 1, (m + 1) as f64 * dt, &surface);
    }
    let mut scenario = rec.finish(surface);
    scenario.seed = seed;
    Ok(CoupledPath {
        scenario,
        loss,
        discount,
        prices,
    })
}

/// `(T, x_i)`-bond prices at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid {
    pub t: f64,
    pub maturities: Vec<f64>,
    pub xs: Vec<f64>,
    /// `[maturity, rating]`.
    pub prices: Array2<f64>,
    pub discounted: Array2<f64>,
}

impl PriceGrid {
    pub fn price(&self, maturity_index: usize, rating: usize) -> f64 {
        self.prices[[maturity_index, rating]]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["T", "x", "price", "discounted_price"])?;
        for (m, &big_t) in self.maturities.iter().enumerate() {
            for (i, &x) in self.xs.iter().enumerate() {
                wr.write_record([
                    big_t.to_string(),
                    x.to_string(),
                    self.prices[[m, i]].to_string(),
                    self.discounted[[m, i]].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `∫_0^τ r(u, x_i) du` by the trapezoid rule, the last cell partial.
pub fn yield_integral(surface: &ForwardSurface, i: usize, tau: f64) -> f64 {
    let dz = surface.dz();
    let v = surface.values();
    let full = ((tau / dz).floor() as usize).min(surface.n_z() - 1);
    let mut s = 0.0;
    for k in 0..full {
        s += 0.5 * (v[[k, i]] + v[[k + 1, i]]) * dz;
    }
    let rest = tau - full as f64 * dz;
    if rest > 0.0 && full + 1 < surface.n_z() {
        let w = rest / dz;
        let r_end = v[[full, i]] + w * (v[[full + 1, i]] - v[[full, i]]);
        s += 0.5 * (v[[full, i]] + r_end) * rest;
    }
    s
}

/// `P(t, T, x_i) = 1{l ≤ x_i} e^{-∫_0^{T-t} r(u, x_i) du}`, and the same
/// times `discount`.
pub fn bond_prices(
    surface: &ForwardSurface,
    l: f64,
    t: f64,
    maturities: &[f64],
    discount: f64,
) -> Result<PriceGrid> {
    let xs = surface.ladder().xs().to_vec();
    let n = xs.len();
    let z_max = surface.z_max();
    let mut prices = Array2::zeros((maturities.len(), n));
    for (m, &big_t) in maturities.iter().enumerate() {
        let tau = big_t - t;
        if tau > z_max * (1.0 + 1e-12) {
            return Err(Error::MaturityBeyondGrid {
                maturity: big_t,
                t,
                z_max,
            });
        }
        if tau < -1e-12 * big_t.abs().max(1.0) {
            return Err(Error::InvalidInput(format!("maturity {big_t} precedes valuation time {t}")));
        }
        let tau = tau.clamp(0.0, z_max);
        for (i, &x) in xs.iter().enumerate() {
            prices[[m, i]] = if l <= x {
                (-yield_integral(surface, i, tau)).exp()
            } else {
                0.0
            };
        }
    }
    let discounted = &prices * discount;
    Ok(PriceGrid {
        t,
        maturities: maturities.to_vec(),
        xs,
        prices,
        discounted,
    })
}

/// Price column of the digital tranche paying `1{L_T ≤ x}`, one entry per maturity.
pub fn digital_cdo_price(grid: &PriceGrid, x: f64) -> Result<Vec<f64>> {
    let i = grid
        .xs
        .iter()
        .position(|&xi| xi == x)
        .ok_or(Error::NotOnLadder(x))?;
    Ok(grid.prices.column(i).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(c: &[f64], z_max: f64) -> ForwardSurface {
        let ladder = RatingLadder::uniform(c.len()).unwrap();
        ForwardSurface::from_fn(0.1, (z_max / 0.1).round() as usize + 1, 1.0, ladder, |_, i| c[i]).unwrap()
    }

    #[test]
    fn intensity_subtracts_the_top_rating() {
        let lam = intensity(&[0.05, 0.03, 0.02]);
        let want = [0.03, 0.01, 0.0];
        for (a, b) in lam.lambda.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(lam.negative.is_empty());
        assert_eq!(intensity(&[0.02, 0.03, 0.02]).negative, vec![]);
        assert_eq!(intensity(&[0.01, 0.03, 0.02]).negative, vec![0]);
        assert!(intensity(&[0.04; 3]).lambda.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn loss_path_is_cadlag() {
        let p = LossPath::new(vec![0.5, 1.0], vec![0.25, 0.5]).unwrap();
        assert_eq!(p.level_at(0.49), 0.0);
        assert_eq!(p.level_at(0.5), 0.25);
        assert_eq!(p.level_before(0.5), 0.0);
        assert_eq!(p.level_at(7.0), 0.5);
        assert!(LossPath::new(vec![0.5, 0.4], vec![0.1, 0.2]).is_err());
        assert!(LossPath::new(vec![0.5], vec![1.5]).is_err());
        assert!(LossPath::new(vec![0.5, 0.6], vec![0.3, 0.2]).is_err());
    }

    #[test]
    fn kernel_crosses_exactly_the_switched_thresholds() {
        let ladder = RatingLadder::uniform(4).unwrap();
        let lam = [0.6, 0.4, 0.1, 0.0];
        let (h, w) = jump_kernel(&ladder, &lam, 0.0, 0.0, 1.0).unwrap();
        assert!((h - 0.6).abs() < 1e-15);
        let ws: Vec<f64> = w.iter().map(|x| x.1).collect();
        assert_eq!(w.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!((ws[0] - 0.2).abs() < 1e-15 && (ws[1] - 0.3).abs() < 1e-15 && (ws[2] - 0.1).abs() < 1e-15);
        // At L = x_2 the lowest alive rating is x_2 itself.
        let (h, _) = jump_kernel(&ladder, &lam, 0.5, 0.0, 1.0).unwrap();
        assert!((h - 0.4).abs() < 1e-15);
        let (h, w) = jump_kernel(&ladder, &lam, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(h, 0.0);
        assert!(w.is_empty());
    }

    #[test]
    fn negative_decrement_is_inconsistent() {
        let ladder = RatingLadder::uniform(3).unwrap();
        let err = jump_kernel(&ladder, &[0.1, 0.2, 0.0], 0.0, 1.5, 1.0).unwrap_err();
        assert_eq!(
            err,
            Error::ModelInconsistency {
                t: 1.5,
                rating: 0,
                decrement: 0.1 - 0.2
            }
        );
    }

    #[test]
    fn flat_curve_prices() {
        let s = flat(&[0.05, 0.02], 3.0);
        let g = bond_prices(&s, 0.0, 0.0, &[0.0, 0.75, 2.25, 3.0], 0.9).unwrap();
        for (m, &big_t) in g.maturities.iter().enumerate() {
            for (i, c) in [0.05f64, 0.02].iter().enumerate() {
                let want = (-c * big_t).exp();
                assert!((g.price(m, i) - want).abs() < 1e-14);
                assert!((g.discounted[[m, i]] - 0.9 * want).abs() < 1e-14);
            }
        }
        let zero = bond_prices(&flat(&[0.0, 0.0], 1.0), 0.0, 0.0, &[1.0], 1.0).unwrap();
        assert!(zero.prices.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn partial_cell_uses_linear_interpolation() {
        let ladder = RatingLadder::uniform(1).unwrap();
        let s = ForwardSurface::from_fn(0.1, 21, 1.0, ladder, |z, _| z).unwrap();
        // ∫_0^τ u du is exact for linear integrands.
        for tau in [0.0, 0.05, 0.37, 1.0, 1.99] {
            assert!((yield_integral(&s, 0, tau) - 0.5 * tau * tau).abs() < 1e-14);
        }
    }

    #[test]
    fn defaulted_rating_is_worthless() {
        let s = flat(&[0.05, 0.02], 3.0);
        let g = bond_prices(&s, 0.75, 1.0, &[2.0], 1.0).unwrap();
        assert_eq!(g.price(0, 0), 0.0);
        assert!(g.price(0, 1) > 0.0);
        assert_eq!(digital_cdo_price(&g, 0.5).unwrap(), vec![0.0]);
        assert_eq!(digital_cdo_price(&g, 1.0).unwrap(), vec![g.price(0, 1)]);
        assert_eq!(digital_cdo_price(&g, 0.7), Err(Error::NotOnLadder(0.7)));
    }

    #[test]
    fn maturity_beyond_grid_is_an_error() {
        let s = flat(&[0.05], 3.0);
        let err = bond_prices(&s, 0.0, 0.5, &[3.6], 1.0).unwrap_err();
        assert!(matches!(err, Error::MaturityBeyondGrid { .. }));
        assert!(bond_prices(&s, 0.0, 0.5, &[3.5], 1.0).is_ok());
        assert!(bond_prices(&s, 0.0, 0.5, &[0.4], 1.0).is_err());
    }
}
