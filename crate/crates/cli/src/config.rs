//! Scenario configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use cdo_hjmm::hjmm::{DriftConvention, Grid};
use cdo_hjmm::levy::{Atom, Density, LevyMeasure, LevyTriplet, DEFAULT_EPS};
use cdo_hjmm::statespace::{ForwardSurface, RatingLadder};
use cdo_hjmm::volatility::{Factor, SamplingBoxes, VolatilitySpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: Option<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    /// Must equal `grid.dz` when given.
    pub dt: Option<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub drift_convention: DriftConvention,
    pub output_dir: Option<PathBuf>,
    pub levy: LevyConfig,
    pub grid: Option<GridConfig>,
    pub volatility: Option<VolatilityConfig>,
    pub r0: Option<R0Config>,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_n_paths() -> usize {
    100
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyConfig {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    pub density: Option<DensityConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub location: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    /// `c e^{-λ y}`, on `(0, ∞)` unless `support` is given.
    ExpTilted {
        c: f64,
        lambda: f64,
        support: Option<[f64; 2]>,
    },
    Uniform { c: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dz: f64,
    pub z_max: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub ladder: LadderConfig,
}

fn default_gamma() -> f64 {
    1.0
}

/// Either the rating points or their number (uniform `k/n`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LadderConfig {
    Uniform(usize),
    Points(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolatilityConfig {
    Multiplicative {
        #[serde(default = "Factor::one")]
        f1: Factor,
        #[serde(default = "Factor::one")]
        f2: Factor,
        #[serde(default = "Factor::one")]
        f3: Factor,
        h_list: Vec<Factor>,
        h: Factor,
        h_prime_bound: Option<f64>,
    },
    Separable {
        #[serde(default = "Factor::one")]
        f1: Factor,
        #[serde(default = "Factor::one")]
        f2: Factor,
        #[serde(default = "Factor::one")]
        f3: Factor,
        phi: Vec<Factor>,
    },
    /// `g_i ≡ σ`.
    Constant { sigma: f64 },
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum R0Config {
    /// One value per rating, or a single value for all.
    Flat { values: Vec<f64> },
    /// `β0 + β1 e^{-z/τ} + β2 (z/τ) e^{-z/τ} + spread_i`.
    NelsonSiegel {
        beta0: f64,
        beta1: f64,
        beta2: f64,
        tau: f64,
        #[serde(default)]
        spreads: Vec<f64>,
    },
    /// Table with a `z` column and one column per rating, relative to the
    /// config file.
    Csv { path: PathBuf },
}

pub const ALL_CONDITIONS: [&str; 7] = ["P1", "P2", "M1", "M2", "derivative", "moments", "regularity"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "all_conditions")]
    pub conditions: Vec<String>,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default = "default_points")]
    pub points_per_axis: usize,
    #[serde(default = "default_lhs")]
    pub lhs_points: usize,
}

fn all_conditions() -> Vec<String> {
    ALL_CONDITIONS.iter().map(|s| s.to_string()).collect()
}

fn default_r_max() -> f64 {
    5.0
}

fn default_points() -> usize {
    9
}

fn default_lhs() -> usize {
    1000
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            conditions: all_conditions(),
            r_max: default_r_max(),
            points_per_axis: default_points(),
            lhs_points: default_lhs(),
        }
    }
}

impl CheckConfig {
    pub fn wants(&self, name: &str) -> bool {
        self.conditions.iter().any(|c| c == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Defaults to `horizon + 1`.
    #[serde(default)]
    pub maturities: Vec<f64>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default = "default_multiple")]
    pub multiple: f64,
    #[serde(default = "default_n_paths")]
    pub audit_paths: usize,
    #[serde(default = "default_tolerance_ratio")]
    pub tolerance_ratio: f64,
}

fn default_checkpoints() -> usize {
    cdo_hjmm::verify::DEFAULT_CHECKPOINTS
}

fn default_multiple() -> f64 {
    cdo_hjmm::verify::DEFAULT_MULTIPLE
}

fn default_tolerance_ratio() -> f64 {
    cdo_hjmm::verify::DEFAULT_TOLERANCE_RATIO
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            maturities: vec![],
            checkpoints: default_checkpoints(),
            multiple: default_multiple(),
            audit_paths: default_n_paths(),
            tolerance_ratio: default_tolerance_ratio(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Defaults to `[horizon]`.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Defaults to `[0, horizon]`.
    #[serde(default)]
    pub price_times: Vec<f64>,
    #[serde(default)]
    pub maturities: Vec<f64>,
    #[serde(default = "default_sim_paths")]
    pub paths: usize,
}

fn default_sim_paths() -> usize {
    1
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            snapshot_times: vec![],
            price_times: vec![],
            maturities: vec![],
            paths: default_sim_paths(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        // Relative CSV paths are taken from the config file's directory.
        if let Some(R0Config::Csv { path: p }) = &mut cfg.r0 {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.fill_defaults();
        Ok(cfg)
    }

    /// Writes every implied default into the config so the metadata is
    /// self-describing.
    pub fn fill_defaults(&mut self) {
        if self.verify.maturities.is_empty() {
            self.verify.maturities = vec![self.horizon + 1.0];
        }
        if self.simulate.snapshot_times.is_empty() {
            self.simulate.snapshot_times = vec![self.horizon];
        }
        if self.simulate.price_times.is_empty() {
            self.simulate.price_times = vec![0.0, self.horizon];
        }
        if self.simulate.maturities.is_empty() {
            self.simulate.maturities = self.verify.maturities.clone();
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| config_err("no seed: set `seed` in the config or pass --seed"))
    }

    pub fn triplet(&self) -> Result<LevyTriplet, CliError> {
        let l = &self.levy;
        let atoms = l
            .atoms
            .iter()
            .map(|a| Atom {
                location: a.location,
                mass: a.mass,
            })
            .collect();
        let density = l.density.as_ref().map(|d| match *d {
            DensityConfig::ExpTilted { c, lambda, support } => {
                let dens = Density::exp_tilted(c, lambda);
                match support {
                    Some([lo, hi]) => dens.with_support(lo, hi),
                    None => dens,
                }
            }
            DensityConfig::Uniform { c, lo, hi } => Density::uniform(c, lo, hi),
        });
        let nu = LevyMeasure::new(atoms, density).map_err(|e| config_err(format!("[levy]: {e}")))?;
        LevyTriplet::new(l.a, l.q, nu).map_err(|e| config_err(format!("[levy]: {e}")))
    }

    fn grid_config(&self) -> Result<&GridConfig, CliError> {
        self.grid.as_ref().ok_or_else(|| config_err("missing [grid] section"))
    }

    pub fn ladder(&self) -> Result<RatingLadder, CliError> {
        let l = match &self.grid_config()?.ladder {
            LadderConfig::Uniform(n) => RatingLadder::uniform(*n),
            LadderConfig::Points(xs) => RatingLadder::new(xs.clone()),
        };
        l.map_err(|e| config_err(format!("[grid] ladder: {e}")))
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = self.grid_config()?;
        if let Some(dt) = self.dt {
            if dt != g.dz {
                return Err(config_err(format!("dt = {dt} must equal grid.dz = {}", g.dz)));
            }
        }
        Grid::new(g.dz, g.z_max, g.gamma, self.ladder()?).map_err(|e| config_err(format!("[grid]: {e}")))
    }

    pub fn volatility(&self) -> Result<VolatilitySpec, CliError> {
        let n = self.ladder()?.len();
        let v = self
            .volatility
            .as_ref()
            .ok_or_else(|| config_err("missing [volatility] section"))?;
        let spec = match v.clone() {
            VolatilityConfig::Multiplicative {
                f1,
                f2,
                f3,
                h_list,
                h,
                h_prime_bound,
            } => VolatilitySpec::multiplicative(f1, f2, f3, h_list, h, h_prime_bound),
            VolatilityConfig::Separable { f1, f2, f3, phi } => VolatilitySpec::separable(f1, f2, f3, phi),
            VolatilityConfig::Constant { sigma } => VolatilitySpec::constant(n, sigma),
            VolatilityConfig::Zero => VolatilitySpec::zero(n),
        }
        .map_err(|e| config_err(format!("[volatility]: {e}")))?;
        if spec.n() != n {
            return Err(config_err(format!(
                "[volatility] defines {} ratings, the ladder has {n}",
                spec.n()
            )));
        }
        Ok(spec)
    }

    pub fn r0(&self) -> Result<ForwardSurface, CliError> {
        let grid = self.grid()?;
        let n = grid.ladder.len();
        let r0 = self.r0.as_ref().ok_or_else(|| config_err("missing [r0] section"))?;
        let surface = match r0 {
            R0Config::Flat { values } => {
                if values.len() != 1 && values.len() != n {
                    return Err(config_err(format!("[r0] flat needs 1 or {n} values")));
                }
                grid.surface(|_, i| values[i.min(values.len() - 1)])
            }
            R0Config::NelsonSiegel {
                beta0,
                beta1,
                beta2,
                tau,
                spreads,
            } => {
                if !(*tau > 0.0) {
                    return Err(config_err("[r0] tau must be positive"));
                }
                if !spreads.is_empty() && spreads.len() != n {
                    return Err(config_err(format!("[r0] needs {n} spreads")));
                }
                grid.surface(|z, i| {
                    let e = (-z / tau).exp();
                    beta0 + beta1 * e + beta2 * (z / tau) * e + spreads.get(i).copied().unwrap_or(0.0)
                })
            }
            R0Config::Csv { path } => {
                let f = fs::File::open(path).map_err(|e| config_err(format!("[r0] {}: {e}", path.display())))?;
                ForwardSurface::read_csv(f, grid.dz, grid.n_z, grid.gamma, grid.ladder.clone())
            }
        };
        surface.map_err(|e| config_err(format!("[r0]: {e}")))
    }

    pub fn boxes(&self, seed: u64) -> Result<SamplingBoxes, CliError> {
        let grid = self.grid()?;
        let mut b = SamplingBoxes::new(grid.z_max(), &grid.ladder, seed);
        b.r_max = self.check.r_max;
        b.points_per_axis = self.check.points_per_axis;
        b.lhs_points = self.check.lhs_points;
        Ok(b)
    }

    pub fn validate_conditions(&self) -> Result<(), CliError> {
        for c in &self.check.conditions {
            if !ALL_CONDITIONS.contains(&c.as_str()) {
                return Err(config_err(format!(
                    "[check] unknown condition {c:?}; known: {}",
                    ALL_CONDITIONS.join(", ")
                )));
            }
        }
        Ok(())
    }
}
