//! No-arbitrage drift and the explicit mild-form stepper for the forward surface.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{at_time, Error, Result};
use crate::levy::{IncrementSeries, JPrime, LevyTriplet};
use crate::market::LossPath;
use crate::statespace::{ForwardSurface, RatingLadder};
use crate::volatility::VolatilitySpec;

/// Where `J'` is evaluated in the drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DriftConvention {
    /// `J'(∫_0^z g_i)`.
    #[default]
    #[serde(rename = "eq16", alias = "bare")]
    Bare,
    /// `J'(∫_0^z g_i + a - m_ε)`, the convention of the ε-truncated scheme.
    #[serde(rename = "eq34", alias = "shifted")]
    Shifted,
}

impl DriftConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            DriftConvention::Bare => "eq16",
            DriftConvention::Shifted => "eq34",
        }
    }
}

impl std::str::FromStr for DriftConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq16" | "bare" => Ok(DriftConvention::Bare),
            "eq34" | "shifted" => Ok(DriftConvention::Shifted),
            other => Err(Error::InvalidInput(format!("unknown drift convention {other:?}"))),
        }
    }
}

/// Surface geometry shared by the model and every surface it evolves.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dz: f64,
    /// Number of grid points, `z_k = k dz` for `k < n_z`.
    pub n_z: usize,
    pub gamma: f64,
    pub ladder: RatingLadder,
}

impl Grid {
    pub fn new(dz: f64, z_max: f64, gamma: f64, ladder: RatingLadder) -> Result<Self> {
        if !(dz > 0.0) || !(z_max > 0.0) {
            return Err(Error::InvalidInput(format!("need dz > 0 and z_max > 0, got {dz}, {z_max}")));
        }
        let cells = (z_max / dz).round();
        if (cells * dz - z_max).abs() > 1e-9 * z_max.max(1.0) {
            return Err(Error::InvalidInput(format!("z_max = {z_max} is not a multiple of dz = {dz}")));
        }
        Ok(Self {
            dz,
            n_z: cells as usize + 1,
            gamma,
            ladder,
        })
    }

    pub fn z_max(&self) -> f64 {
        self.dz * (self.n_z - 1) as f64
    }

    pub fn surface<F: Fn(f64, usize) -> f64>(&self, f: F) -> Result<ForwardSurface> {
        ForwardSurface::from_fn(self.dz, self.n_z, self.gamma, self.ladder.clone(), f)
    }

    fn matches(&self, s: &ForwardSurface) -> bool {
        s.dz() == self.dz && s.n_z() == self.n_z && s.ladder() == &self.ladder
    }
}

/// Lévy-driven HJMM model on a fixed grid, stepped with `dt = dz`.
#[derive(Debug, Clone)]
pub struct HjmmModel {
    triplet: LevyTriplet,
    spec: VolatilitySpec,
    grid: Grid,
    eps: f64,
    convention: DriftConvention,
    no_drift: bool,
    /// `a - m_ε`.
    truncated_drift: f64,
    jprime: JPrime,
}

impl HjmmModel {
    pub fn new(triplet: LevyTriplet, spec: VolatilitySpec, grid: Grid, eps: f64) -> Result<Self> {
        Self::with_convention(triplet, spec, grid, eps, DriftConvention::default())
    }

    pub fn with_convention(
        triplet: LevyTriplet,
        spec: VolatilitySpec,
        grid: Grid,
        eps: f64,
        convention: DriftConvention,
    ) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
        }
        if spec.n() != grid.ladder.len() {
            return Err(Error::InvalidInput(format!(
                "volatility has {} ratings, ladder has {}",
                spec.n(),
                grid.ladder.len()
            )));
        }
        let truncated_drift = triplet.a - triplet.small_jump_drift(eps)?;
        let shift = match convention {
            DriftConvention::Bare => 0.0,
            DriftConvention::Shifted => truncated_drift,
        };
        let reach = spec.declared_sup().unwrap_or(1.0) * grid.z_max() * 1.5;
        let jprime = JPrime::new(&triplet, shift - reach, shift + reach)?;
        Ok(Self {
            triplet,
            spec,
            grid,
            eps,
            convention,
            no_drift: false,
            truncated_drift,
            jprime,
        })
    }

    /// Drops the drift term entirely. Only useful to show that the martingale
    /// test rejects a model without the HJM correction.
    pub fn without_drift(mut self) -> Self {
        self.no_drift = true;
        self
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn spec(&self) -> &VolatilitySpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.grid.dz
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn convention(&self) -> DriftConvention {
        self.convention
    }

    pub fn has_drift(&self) -> bool {
        !self.no_drift
    }

    fn check_surface(&self, s: &ForwardSurface) -> Result<()> {
        if self.grid.matches(s) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "surface geometry (dz {}, {} points, {} ratings) differs from the model grid",
                s.dz(),
                s.n_z(),
                s.ladder().len()
            )))
        }
    }

    /// `g_i(t, z_k, l, r(z_k, ·))` on every node.
    pub fn volatility_field(&self, t: f64, l: f64, surface: &ForwardSurface) -> Result<Array2<f64>> {
        self.check_surface(surface)?;
        let v = surface.values();
        let mut g = Array2::zeros(v.dim());
        let mut row = vec![0.0; v.ncols()];
        let mut out = vec![0.0; v.ncols()];
        for k in 0..v.nrows() {
            row.iter_mut().zip(v.row(k)).for_each(|(a, b)| *a = *b);
            let z = surface.z(k);
            self.spec.eval_all(t, z, l, &row, &mut out);
            for (i, &gi) in out.iter().enumerate() {
                if !gi.is_finite() {
                    return Err(Error::DriftDomain {
                        z,
                        rating: i,
                        reason: format!("volatility is {gi}"),
                    });
                }
                g[[k, i]] = gi;
            }
        }
        Ok(g)
    }

    /// `F(z_k, x_i) = J'(I_k,i) g_i` with `I` the cumulative trapezoid of `g_i` in `z`.
    pub fn drift(&self, t: f64, l: f64, surface: &ForwardSurface) -> Result<Array2<f64>> {
        let g = self.volatility_field(t, l, surface)?;
        self.drift_from(&g)
    }

    fn drift_from(&self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let (n_z, n) = g.dim();
        let mut f = Array2::zeros((n_z, n));
        if self.no_drift {
            return Ok(f);
        }
        let shift = match self.convention {
            DriftConvention::Bare => 0.0,
            DriftConvention::Shifted => self.truncated_drift,
        };
        let dz = self.grid.dz;
        for i in 0..n {
            let mut integral = 0.0;
            for k in 0..n_z {
                if k > 0 {
                    integral += 0.5 * (g[[k - 1, i]] + g[[k, i]]) * dz;
                }
                let gi = g[[k, i]];
                if gi == 0.0 {
                    continue;
                }
                let jp = self.jprime.eval(integral + shift).map_err(|e| Error::DriftDomain {
                    z: k as f64 * dz,
                    rating: i,
                    reason: e.to_string(),
                })?;
                f[[k, i]] = jp * gi;
            }
        }
        Ok(f)
    }

    /// One step from `t` to `t + dt`.
    ///
    /// Every node takes the value of its right neighbour plus drift and
    /// continuous noise evaluated there (the last node is its own neighbour).
    /// Jumps are then applied one after another with `g` re-evaluated on the
    /// current surface.
    pub fn step(
        &self,
        t: f64,
        l: f64,
        surface: &ForwardSurface,
        continuous: f64,
        jumps: &[f64],
    ) -> Result<ForwardSurface> {
        self.step_inner(t, l, surface, continuous, jumps).map_err(at_time(t))
    }

    fn step_inner(
        &self,
        t: f64,
        l: f64,
        surface: &ForwardSurface,
        continuous: f64,
        jumps: &[f64],
    ) -> Result<ForwardSurface> {
        let old = surface.values();
        let (n_z, n) = old.dim();
        let last = n_z - 1;
        let dt = self.dt();
        let mut new = Array2::zeros((n_z, n));
        let transport_only = self.spec.is_identically_zero();
        if transport_only {
            for k in 0..n_z {
                let src = (k + 1).min(last);
                for i in 0..n {
                    new[[k, i]] = old[[src, i]];
                }
            }
            return surface.with_values(new);
        }
        let g = self.volatility_field(t, l, surface)?;
        let f = self.drift_from(&g)?;
        for k in 0..n_z {
            let src = (k + 1).min(last);
            for i in 0..n {
                new[[k, i]] = old[[src, i]] + f[[src, i]] * dt + g[[src, i]] * continuous;
            }
        }
        let mut row = vec![0.0; n];
        let mut out = vec![0.0; n];
        for &u in jumps {
            for k in 0..n_z {
                row.iter_mut().zip(new.row(k)).for_each(|(a, b)| *a = *b);
                self.spec.eval_all(t, k as f64 * self.grid.dz, l, &row, &mut out);
                for i in 0..n {
                    new[[k, i]] += out[i] * u;
                }
            }
        }
        surface.with_values(new)
    }

    /// Number of steps covering `horizon`, which must be a multiple of `dt`.
    pub fn steps_for(&self, horizon: f64) -> Result<usize> {
        grid_index(horizon, self.dt()).ok_or_else(|| {
            Error::InvalidInput(format!("horizon {horizon} is not a multiple of dt = {}", self.dt()))
        })
    }

    /// Evolves `r0` along one seeded noise path with the loss path frozen.
    pub fn solve_path(
        &self,
        r0: &ForwardSurface,
        loss: &LossPath,
        horizon: f64,
        snapshot_times: &[f64],
        seed: u64,
    ) -> Result<ScenarioResult> {
        let n_steps = self.steps_for(horizon)?;
        let noise = self.triplet.simulate_increments(self.dt(), n_steps, self.eps, seed)?;
        let mut res = self.solve_with_noise(r0, loss, &noise, snapshot_times)?;
        res.seed = seed;
        Ok(res)
    }

    /// Evolves `r0` along the given increments; `noise.increments[m]` drives
    /// the step from `m dt` to `(m + 1) dt`.
    pub fn solve_with_noise(
        &self,
        r0: &ForwardSurface,
        loss: &LossPath,
        noise: &IncrementSeries,
        snapshot_times: &[f64],
    ) -> Result<ScenarioResult> {
        self.check_surface(r0)?;
        if noise.dt != self.dt() {
            return Err(Error::InvalidInput(format!(
                "noise step {} differs from dt = {}",
                noise.dt,
                self.dt()
            )));
        }
        let n_steps = noise.increments.len();
        let snaps = snapshot_steps(snapshot_times, self.dt(), n_steps)?;
        let dt = self.dt();
        let mut rec = PathRecorder::new(r0, &snaps);
        let mut surface = r0.clone();
        for m in 0..n_steps {
            let t = m as f64 * dt;
            let l = loss.level_at(t);
            let jumps = &noise.jumps[m];
            let continuous = noise.increments[m] - jumps.iter().sum::<f64>();
            surface = self.step(t, l, &surface, continuous, jumps)?;
            rec.record(m + 1, (m + 1) as f64 * dt, &surface);
        }
        Ok(rec.finish(surface))
    }
}

/// `round(t / dt)` when `t` lies on the time grid.
pub(crate) fn grid_index(t: f64, dt: f64) -> Option<usize> {
    if !(t >= 0.0) || !t.is_finite() {
        return None;
    }
    let m = (t / dt).round();
    ((m * dt - t).abs() <= 1e-9 * t.max(1.0)).then_some(m as usize)
}

pub(crate) fn snapshot_steps(times: &[f64], dt: f64, n_steps: usize) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| match grid_index(t, dt) {
            Some(m) if m <= n_steps => Ok(m),
            _ => Err(Error::InvalidInput(format!(
                "snapshot time {t} is not a grid time in [0, {}]",
                n_steps as f64 * dt
            ))),
        })
        .collect()
}

/// A grid location where an extreme value was seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extremum {
    pub value: f64,
    pub t: f64,
    pub z: f64,
    pub rating: usize,
}

impl Extremum {
    fn none() -> Self {
        Self {
            value: f64::INFINITY,
            t: f64::NAN,
            z: f64::NAN,
            rating: 0,
        }
    }

    fn offer(&mut self, value: f64, t: f64, z: f64, rating: usize) {
        if value < self.value || value.is_nan() && !self.value.is_nan() {
            *self = Self { value, t, z, rating };
        }
    }
}

/// Output of one path.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub seed: u64,
    /// `t_m = m dt`, `m = 0..=n_steps`.
    pub times: Vec<f64>,
    /// `r(t_m, 0, x_i)`.
    pub short_end: Vec<Vec<f64>>,
    pub snapshots: Vec<(f64, ForwardSurface)>,
    pub final_surface: ForwardSurface,
    /// Minimum of `r` over all times, maturities and ratings.
    pub min_r: Extremum,
    /// Minimum of `r(·, ·, x_i) - r(·, ·, x_{i+1})`; `rating` is `i`.
    pub min_gap: Extremum,
    /// The same restricted to `z = 0`.
    pub min_short_gap: Extremum,
    pub max_abs_r: f64,
}

/// Accumulates the per-step records of a path.
#[derive(Debug, Clone)]
pub struct PathRecorder {
    snaps: Vec<usize>,
    res: ScenarioResult,
}

impl PathRecorder {
    pub fn new(r0: &ForwardSurface, snapshot_steps: &[usize]) -> Self {
        let mut rec = Self {
            snaps: snapshot_steps.to_vec(),
            res: ScenarioResult {
                seed: 0,
                times: Vec::new(),
                short_end: Vec::new(),
                snapshots: Vec::new(),
                final_surface: r0.clone(),
                min_r: Extremum::none(),
                min_gap: Extremum::none(),
                min_short_gap: Extremum::none(),
                max_abs_r: 0.0,
            },
        };
        rec.record(0, 0.0, r0);
        rec
    }

    pub fn record(&mut self, m: usize, t: f64, s: &ForwardSurface) {
        let res = &mut self.res;
        res.times.push(t);
        res.short_end.push(s.short_end());
        if self.snaps.contains(&m) {
            res.snapshots.push((t, s.clone()));
        }
        let v = s.values();
        let n = v.ncols();
        for (k, row) in v.outer_iter().enumerate() {
            let z = s.z(k);
            for i in 0..n {
                let r = row[i];
                res.min_r.offer(r, t, z, i);
                res.max_abs_r = res.max_abs_r.max(r.abs());
                if i + 1 < n {
                    let gap = r - row[i + 1];
                    res.min_gap.offer(gap, t, z, i);
                    if k == 0 {
                        res.min_short_gap.offer(gap, t, z, i);
                    }
                }
            }
        }
    }

    pub fn finish(mut self, last: ForwardSurface) -> ScenarioResult {
        self.res.final_surface = last;
        self.res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{Atom, LevyMeasure};

    fn grid(dz: f64, z_max: f64, n: usize) -> Grid {
        Grid::new(dz, z_max, 1.0, RatingLadder::uniform(n).unwrap()).unwrap()
    }

    #[test]
    fn wiener_drift_is_sigma_squared_z() {
        let g = grid(1e-2, 10.0, 1);
        let sigma = 0.3;
        let m = HjmmModel::new(LevyTriplet::wiener(), VolatilitySpec::constant(1, sigma).unwrap(), g.clone(), 1e-3)
            .unwrap();
        let f = m.drift(0.0, 0.0, &g.surface(|_, _| 0.02).unwrap()).unwrap();
        for k in 1..g.n_z {
            let z = k as f64 * g.dz;
            assert!((f[[k, 0]] - sigma * sigma * z).abs() <= 1e-12 * z);
        }
        assert_eq!(f[[0, 0]], 0.0);
    }

    #[test]
    fn pure_drift_triplet_gives_constant_drift() {
        let g = grid(0.05, 2.0, 2);
        let tr = LevyTriplet::pure_drift(0.7).unwrap();
        let m = HjmmModel::new(tr, VolatilitySpec::constant(2, 0.2).unwrap(), g.clone(), 1e-3).unwrap();
        let f = m.drift(0.0, 0.0, &g.surface(|_, _| 0.0).unwrap()).unwrap();
        assert!(f.iter().all(|&v| (v + 0.14).abs() < 1e-15));
    }

    #[test]
    fn shifted_convention_moves_the_argument() {
        let g = grid(0.05, 1.0, 1);
        let tr = LevyTriplet::new(0.4, 1.0, LevyMeasure::zero()).unwrap();
        let spec = VolatilitySpec::constant(1, 0.5).unwrap();
        let bare = HjmmModel::new(tr.clone(), spec.clone(), g.clone(), 1e-3).unwrap();
        let shifted = HjmmModel::with_convention(tr, spec, g.clone(), 1e-3, DriftConvention::Shifted).unwrap();
        let s = g.surface(|_, _| 0.0).unwrap();
        let (fb, fs) = (bare.drift(0.0, 0.0, &s).unwrap(), shifted.drift(0.0, 0.0, &s).unwrap());
        // J'(x) = -0.4 + x, the shift adds 0.4 inside.
        for k in 0..g.n_z {
            assert!((fs[[k, 0]] - fb[[k, 0]] - 0.5 * 0.4).abs() < 1e-14);
        }
    }

    #[test]
    fn drift_outside_domain_names_the_node() {
        // J'(x) = 800 e^{800 x} overflows once the integral passes ~0.89.
        let nu = LevyMeasure::atoms_only(vec![Atom {
            location: -800.0,
            mass: 1.0,
        }])
        .unwrap();
        let tr = LevyTriplet::new(0.0, 0.0, nu).unwrap();
        let g = grid(0.1, 2.0, 1);
        let m = HjmmModel::new(tr, VolatilitySpec::constant(1, 1.0).unwrap(), g.clone(), 1e-3).unwrap();
        let err = m.drift(0.0, 0.0, &g.surface(|_, _| 0.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DriftDomain { rating: 0, z, .. } if z > 0.0), "{err:?}");
    }

    #[test]
    fn drift_convention_parses() {
        assert_eq!("eq34".parse::<DriftConvention>().unwrap(), DriftConvention::Shifted);
        assert_eq!("bare".parse::<DriftConvention>().unwrap(), DriftConvention::Bare);
        assert!("eq9".parse::<DriftConvention>().is_err());
    }

    #[test]
    fn grid_rejects_misaligned_z_max() {
        assert!(Grid::new(0.3, 1.0, 1.0, RatingLadder::uniform(1).unwrap()).is_err());
        assert_eq!(grid(0.25, 1.0, 1).n_z, 5);
    }
}
