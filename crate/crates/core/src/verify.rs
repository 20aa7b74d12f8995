//! Monte Carlo martingale test and positivity/monotonicity audits.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjmm::{grid_index, Extremum, HjmmModel, ScenarioResult};
use crate::market::{bond_prices, simulate_loss, LossPath, PathPlan, PriceGrid};
use crate::seed::derive_seed;
use crate::statespace::ForwardSurface;
use crate::Verdict;

pub const DEFAULT_MULTIPLE: f64 = 3.0;
pub const DEFAULT_CHECKPOINTS: usize = 10;
/// Audits allow `-ratio · max|r|`.
pub const DEFAULT_TOLERANCE_RATIO: f64 = 1e-6;
pub const PRICE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleSetup {
    pub n_paths: usize,
    pub horizon: f64,
    pub maturities: Vec<f64>,
    pub checkpoints: usize,
    pub multiple: f64,
    pub seed: u64,
}

impl MartingaleSetup {
    pub fn new(n_paths: usize, horizon: f64, maturities: Vec<f64>, seed: u64) -> Self {
        Self {
            n_paths,
            horizon,
            maturities,
            checkpoints: DEFAULT_CHECKPOINTS,
            multiple: DEFAULT_MULTIPLE,
            seed,
        }
    }

    /// Equally spaced checkpoints in `(0, horizon]`, rounded to the time grid.
    pub fn checkpoint_times(&self, dt: f64) -> Result<Vec<f64>> {
        let n_steps = grid_index(self.horizon, dt)
            .ok_or_else(|| Error::InvalidInput(format!("horizon {} is not a multiple of dt", self.horizon)))?;
        if self.checkpoints == 0 || n_steps == 0 {
            return Err(Error::InvalidInput("need at least one checkpoint and one step".into()));
        }
        let mut out: Vec<f64> = (1..=self.checkpoints)
            .map(|c| ((c * n_steps) as f64 / self.checkpoints as f64).round() * dt)
            .collect();
        out.dedup();
        Ok(out)
    }
}

/// Batch means of `P̂(t, T, x_i)` for one `(T, x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleSeries {
    pub maturity: f64,
    pub x: f64,
    pub initial: f64,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `|mean - P̂(0)| / SE`.
    pub normalized: Vec<f64>,
    pub max_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub n_paths: usize,
    pub multiple: f64,
    pub checkpoints: Vec<f64>,
    pub series: Vec<MartingaleSeries>,
    pub max_normalized: f64,
    /// Some standard error exceeds 10% of the initial price.
    pub insufficient_paths: bool,
    pub verdict: Verdict,
}

impl MartingaleReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "T", "x", "mean", "std_error", "normalized", "initial"])?;
        for s in &self.series {
            for k in 0..s.times.len() {
                wr.write_record([
                    s.times[k].to_string(),
                    s.maturity.to_string(),
                    s.x.to_string(),
                    s.means[k].to_string(),
                    s.std_errors[k].to_string(),
                    s.normalized[k].to_string(),
                    s.initial.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn normalized_drift(d: f64, se: f64) -> f64 {
    if d.abs() <= 1e-12 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        d.abs() / se
    }
}

/// Simulates coupled surface and loss paths and tests that the discounted
/// bond prices have constant batch means.
pub fn martingale_test(model: &HjmmModel, r0: &ForwardSurface, setup: &MartingaleSetup) -> Result<MartingaleReport> {
    if setup.n_paths < 2 {
        return Err(Error::InvalidInput("the martingale test needs at least two paths".into()));
    }
    let checkpoints = setup.checkpoint_times(model.dt())?;
    let plan = PathPlan {
        horizon: setup.horizon,
        snapshot_times: checkpoints.clone(),
        price_times: vec![],
        maturities: vec![],
    };
    let initial = bond_prices(r0, 0.0, 0.0, &setup.maturities, 1.0)?;
    let n = r0.ladder().len();
    let n_mat = setup.maturities.len();
    // Checkpoint c, maturity m is used only while t_c ≤ T_m.
    let active: Vec<Vec<bool>> = checkpoints
        .iter()
        .map(|&t| setup.maturities.iter().map(|&big_t| t <= big_t + 1e-12).collect())
        .collect();

    let samples: Vec<Result<Vec<f64>>> = (0..setup.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut out = vec![0.0; checkpoints.len() * n_mat * n];
            let grids = checkpoint_prices(model, r0, &plan, &setup.maturities, &active, derive_seed(setup.seed, p as u64))?;
            for (c, grid) in grids.iter().enumerate() {
                for m in 0..n_mat {
                    for i in 0..n {
                        out[(c * n_mat + m) * n + i] = grid.discounted[[m, i]];
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let samples: Vec<Vec<f64>> = samples.into_iter().collect::<Result<_>>()?;
    let len = checkpoints.len() * n_mat * n;
    let np = setup.n_paths as f64;
    let mut mean = vec![0.0; len];
    for s in &samples {
        for k in 0..len {
            mean[k] += s[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= np);
    // Identical samples get their value back exactly, not a rounded mean.
    for k in 0..len {
        let first = samples[0][k];
        if samples.iter().all(|s| s[k] == first) {
            mean[k] = first;
        }
    }
    let mut sq = vec![0.0; len];
    for s in &samples {
        for k in 0..len {
            sq[k] += (s[k] - mean[k]) * (s[k] - mean[k]);
        }
    }
    let mut series = Vec::new();
    let mut max_normalized: f64 = 0.0;
    let mut insufficient = false;
    for m in 0..n_mat {
        for i in 0..n {
            let p0 = initial.prices[[m, i]];
            let mut s = MartingaleSeries {
                maturity: setup.maturities[m],
                x: r0.ladder().x(i),
                initial: p0,
                times: vec![],
                means: vec![],
                std_errors: vec![],
                normalized: vec![],
                max_normalized: 0.0,
            };
            for (c, &t) in checkpoints.iter().enumerate() {
                if !active[c][m] {
                    continue;
                }
                let k = (c * n_mat + m) * n + i;
                let se = (sq[k] / (np - 1.0) / np).sqrt();
                let z = normalized_drift(mean[k] - p0, se);
                if se > 0.1 * p0 {
                    insufficient = true;
                }
                s.times.push(t);
                s.means.push(mean[k]);
                s.std_errors.push(se);
                s.normalized.push(z);
                s.max_normalized = s.max_normalized.max(z);
            }
            max_normalized = max_normalized.max(s.max_normalized);
            series.push(s);
        }
    }
    let verdict = if max_normalized <= setup.multiple {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(MartingaleReport {
        n_paths: setup.n_paths,
        multiple: setup.multiple,
        checkpoints,
        series,
        max_normalized,
        insufficient_paths: insufficient,
        verdict,
    })
}

/// Discounted prices of one coupled path at each checkpoint. Maturities
/// already reached are priced at the checkpoint itself and ignored later.
fn checkpoint_prices(
    model: &HjmmModel,
    r0: &ForwardSurface,
    plan: &PathPlan,
    maturities: &[f64],
    active: &[Vec<bool>],
    seed: u64,
) -> Result<Vec<PriceGrid>> {
    let path = simulate_loss(model, r0, plan, seed)?;
    path.scenario
        .snapshots
        .iter()
        .zip(active)
        .map(|((t, surface), act)| {
            let mats: Vec<f64> = maturities.iter().zip(act).map(|(&m, &a)| if a { m } else { *t }).collect();
            let step = grid_index(*t, model.dt()).unwrap_or(0);
            bond_prices(surface, path.loss.level_at(*t), *t, &mats, path.discount[step])
        })
        .collect()
}

/// Runs `n_paths` seeded paths with the loss path frozen at zero.
pub fn solve_batch(
    model: &HjmmModel,
    r0: &ForwardSurface,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ScenarioResult>> {
    let zero = LossPath::zero();
    let out: Vec<Result<ScenarioResult>> = (0..n_paths)
        .into_par_iter()
        .map(|p| model.solve_path(r0, &zero, horizon, &[], derive_seed(seed, p as u64)))
        .collect();
    out.into_iter().collect()
}

/// An extremum together with the path it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Located {
    pub path: usize,
    #[serde(flatten)]
    pub at: Extremum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceAudit {
    pub n_paths: usize,
    pub max_abs_r: f64,
    /// `ratio · max|r|`.
    pub tolerance: f64,
    pub min_r: Option<Located>,
    pub min_gap: Option<Located>,
    pub min_short_gap: Option<Located>,
    pub positivity: Verdict,
    pub monotonicity: Verdict,
    pub short_end_monotonicity: Verdict,
}

impl SurfaceAudit {
    pub fn verdict(&self) -> Verdict {
        self.positivity.and(self.monotonicity).and(self.short_end_monotonicity)
    }
}

fn below(x: Option<Located>, tol: f64) -> Verdict {
    match x {
        Some(l) if l.at.value.is_nan() || l.at.value < -tol => Verdict::Fail,
        _ => Verdict::Pass,
    }
}

/// Minimum of `r`, of `r(·,·,x_i) - r(·,·,x_{i+1})` and of the same at `z = 0`
/// over a batch, each with its coordinates.
pub fn audit_positivity_monotonicity(batch: &[ScenarioResult], tolerance_ratio: f64) -> SurfaceAudit {
    let mut max_abs_r: f64 = 0.0;
    let mut min_r: Option<Located> = None;
    let mut min_gap: Option<Located> = None;
    let mut min_short_gap: Option<Located> = None;
    let take = |slot: &mut Option<Located>, path: usize, e: &Extremum| {
        if !e.value.is_finite() && !e.value.is_nan() {
            return;
        }
        match slot {
            Some(cur) if !(e.value < cur.at.value || e.value.is_nan() && !cur.at.value.is_nan()) => {}
            _ => *slot = Some(Located { path, at: *e }),
        }
    };
    for (p, s) in batch.iter().enumerate() {
        max_abs_r = max_abs_r.max(s.max_abs_r);
        take(&mut min_r, p, &s.min_r);
        take(&mut min_gap, p, &s.min_gap);
        take(&mut min_short_gap, p, &s.min_short_gap);
    }
    let tolerance = tolerance_ratio * max_abs_r;
    SurfaceAudit {
        n_paths: batch.len(),
        max_abs_r,
        tolerance,
        min_r,
        min_gap,
        min_short_gap,
        positivity: below(min_r, tolerance),
        monotonicity: below(min_gap, tolerance),
        short_end_monotonicity: below(min_short_gap, tolerance),
    }
}

/// A price-ordering violation `P(larger) - P(smaller) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceViolation {
    pub value: f64,
    pub grid: usize,
    pub t: f64,
    pub maturity: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceAudit {
    pub n_grids: usize,
    /// Largest `P(t, T_2, x) - P(t, T_1, x)` with `T_1 < T_2`; `maturity` is `T_2`.
    pub maturity_violation: Option<PriceViolation>,
    /// Largest `P(t, T, x_i) - P(t, T, x_{i+1})`; `x` is `x_i`.
    pub rating_violation: Option<PriceViolation>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

pub fn price_monotonicity_audit(grids: &[PriceGrid], tolerance: f64) -> PriceAudit {
    let mut mat: Option<PriceViolation> = None;
    let mut rat: Option<PriceViolation> = None;
    let offer = |slot: &mut Option<PriceViolation>, v: PriceViolation| {
        if slot.is_none_or(|s| v.value > s.value || v.value.is_nan()) {
            *slot = Some(v);
        }
    };
    for (gi, g) in grids.iter().enumerate() {
        let mut order: Vec<usize> = (0..g.maturities.len()).collect();
        order.sort_by(|&a, &b| g.maturities[a].total_cmp(&g.maturities[b]));
        for w in order.windows(2) {
            if g.maturities[w[1]] <= g.maturities[w[0]] {
                continue;
            }
            for i in 0..g.xs.len() {
                offer(
                    &mut mat,
                    PriceViolation {
                        value: g.prices[[w[1], i]] - g.prices[[w[0], i]],
                        grid: gi,
                        t: g.t,
                        maturity: g.maturities[w[1]],
                        x: g.xs[i],
                    },
                );
            }
        }
        for (m, &big_t) in g.maturities.iter().enumerate() {
            for i in 0..g.xs.len().saturating_sub(1) {
                offer(
                    &mut rat,
                    PriceViolation {
                        value: g.prices[[m, i]] - g.prices[[m, i + 1]],
                        grid: gi,
                        t: g.t,
                        maturity: big_t,
                        x: g.xs[i],
                    },
                );
            }
        }
    }
    let bad = |v: &Option<PriceViolation>| v.is_some_and(|v| !(v.value <= tolerance));
    let verdict = if bad(&mat) || bad(&rat) {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    PriceAudit {
        n_grids: grids.len(),
        maturity_violation: mat,
        rating_violation: rat,
        tolerance,
        verdict,
    }
}
