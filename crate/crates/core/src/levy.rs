//! Lévy processes given by their characteristic triplet `(a, q, ν)`.
//!
//! The Laplace exponent is `J(z) = -a z + q z²/2 + ∫ (e^{-zy} - 1 + z y 1_{(-1,1)}(y)) ν(dy)`
//! so that `E e^{-z Z(t)} = e^{t J(z)}`; `q` is the variance of the Gaussian part.
//! Atoms of `ν` are summed exactly, a density part by adaptive quadrature.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_finite, integrate_tail, Budget, QuadConfig, QuadOutcome};
use crate::Verdict;

/// Default small-jump cutoff.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Below this `|zy|` the compensated exponential is evaluated by its series.
const SERIES_CUTOFF: f64 = 1e-4;

/// A point mass of the Lévy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Shape of the absolutely continuous part of a Lévy measure.
#[derive(Clone)]
pub enum DensityShape {
    /// `c e^{-λ y}`.
    ExpTilted { c: f64, lambda: f64 },
    /// Constant `c`.
    Uniform { c: f64 },
    /// Arbitrary nonnegative function; code-level only.
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for DensityShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityShape::ExpTilted { c, lambda } => {
                write!(f, "ExpTilted {{ c: {c}, lambda: {lambda} }}")
            }
            DensityShape::Uniform { c } => write!(f, "Uniform {{ c: {c} }}"),
            DensityShape::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Density part of a Lévy measure on the interval `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct Density {
    pub shape: DensityShape,
    pub lo: f64,
    pub hi: f64,
    pub node_budget: usize,
}

impl Density {
    /// `c e^{-λ y}` on `(0, ∞)`.
    pub fn exp_tilted(c: f64, lambda: f64) -> Self {
        Self {
            shape: DensityShape::ExpTilted { c, lambda },
            lo: 0.0,
            hi: f64::INFINITY,
            node_budget: QuadConfig::default().node_budget,
        }
    }

    pub fn uniform(c: f64, lo: f64, hi: f64) -> Self {
        Self {
            shape: DensityShape::Uniform { c },
            lo,
            hi,
            node_budget: QuadConfig::default().node_budget,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
    ) -> Self {
        Self {
            shape: DensityShape::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
            lo,
            hi,
            node_budget: QuadConfig::default().node_budget,
        }
    }

    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn with_node_budget(mut self, nodes: usize) -> Self {
        self.node_budget = nodes;
        self
    }

    pub fn name(&self) -> &str {
        match &self.shape {
            DensityShape::ExpTilted { .. } => "exp_tilted",
            DensityShape::Uniform { .. } => "uniform",
            DensityShape::Custom { name, .. } => name,
        }
    }

    /// Density value; zero outside `[lo, hi]`.
    pub fn value(&self, y: f64) -> f64 {
        if y < self.lo || y > self.hi {
            return 0.0;
        }
        match &self.shape {
            DensityShape::ExpTilted { c, lambda } => c * (-lambda * y).exp(),
            DensityShape::Uniform { c } => *c,
            DensityShape::Custom { f, .. } => f(y),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || !(self.lo < self.hi) {
            return Err(Error::InvalidInput(format!(
                "density support [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        match &self.shape {
            DensityShape::ExpTilted { c, lambda } => {
                if !(*c > 0.0) || !lambda.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "exp_tilted needs c > 0 and finite lambda (c = {c}, lambda = {lambda})"
                    )));
                }
            }
            DensityShape::Uniform { c } => {
                if !(*c > 0.0) || !c.is_finite() {
                    return Err(Error::InvalidInput(format!("uniform needs c > 0 (c = {c})")));
                }
                if !self.lo.is_finite() || !self.hi.is_finite() {
                    return Err(Error::InvalidInput(
                        "uniform density needs a bounded support".into(),
                    ));
                }
            }
            DensityShape::Custom { .. } => {}
        }
        if self.node_budget == 0 {
            return Err(Error::InvalidInput("quadrature node budget must be positive".into()));
        }
        Ok(())
    }

    /// Integrates `f(y) ρ(y)` over `[lo, hi] ∩ [range.0, range.1]`.
    fn integrate<F: Fn(f64) -> f64>(&self, f: F, range: (f64, f64), rel_tol: f64) -> QuadOutcome {
        let lo = self.lo.max(range.0);
        let hi = self.hi.min(range.1);
        if !(hi > lo) {
            return QuadOutcome::Finite(0.0);
        }
        let cfg = QuadConfig {
            rel_tol,
            node_budget: self.node_budget,
        };
        let mut budget = Budget::new(self.node_budget);
        let g = |y: f64| {
            let rho = self.value(y);
            if rho == 0.0 {
                0.0
            } else {
                f(y) * rho
            }
        };

        // Bounded core [core_lo, core_hi], tails beyond ±1 where unbounded.
        let core_lo = if lo.is_finite() { lo } else { hi.min(-1.0) };
        let core_hi = if hi.is_finite() { hi } else { lo.max(1.0) };
        let mut cuts = vec![core_lo];
        for b in [-1.0, 0.0, 1.0] {
            if b > core_lo && b < core_hi {
                cuts.push(b);
            }
        }
        cuts.push(core_hi);
        let mut core = 0.0;
        for w in cuts.windows(2) {
            match integrate_finite(&g, w[0], w[1], &cfg, &mut budget) {
                Some(v) => core += v,
                None => return QuadOutcome::Indeterminate,
            }
        }
        if !core.is_finite() {
            return QuadOutcome::Infinite;
        }
        let mut out = QuadOutcome::Finite(core);
        if !lo.is_finite() {
            out = out.add(integrate_tail(&g, core_lo, -1.0, core, &cfg, &mut budget));
        }
        if !hi.is_finite() {
            let offset = match out {
                QuadOutcome::Finite(v) => v,
                _ => core,
            };
            out = out.add(integrate_tail(&g, core_hi, 1.0, offset, &cfg, &mut budget));
        }
        out
    }
}

/// Lévy measure: finitely many atoms plus an optional density.
#[derive(Debug, Clone)]
pub struct LevyMeasure {
    atoms: Vec<Atom>,
    density: Option<Density>,
    support_lo: f64,
    support_hi: f64,
}

impl LevyMeasure {
    pub fn zero() -> Self {
        Self {
            atoms: Vec::new(),
            density: None,
            support_lo: 0.0,
            support_hi: 0.0,
        }
    }

    /// Builds a measure; the support bounds are the tightest interval
    /// containing every atom and the density support.
    pub fn new(atoms: Vec<Atom>, density: Option<Density>) -> Result<Self> {
        for a in &atoms {
            if !(a.mass > 0.0) || !a.mass.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "atom mass must be positive, got {} at {}",
                    a.mass, a.location
                )));
            }
            if a.location == 0.0 || !a.location.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "atom location must be finite and nonzero, got {}",
                    a.location
                )));
            }
        }
        if let Some(d) = &density {
            d.validate()?;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in &atoms {
            lo = lo.min(a.location);
            hi = hi.max(a.location);
        }
        if let Some(d) = &density {
            lo = lo.min(d.lo);
            hi = hi.max(d.hi);
        }
        if atoms.is_empty() && density.is_none() {
            lo = 0.0;
            hi = 0.0;
        }
        let m = Self {
            atoms,
            density,
            support_lo: lo,
            support_hi: hi,
        };
        match m.levy_integrability() {
            QuadOutcome::Finite(_) => Ok(m),
            _ => Err(Error::InvalidInput(
                "∫(y² ∧ 1) ν(dy) is not finite within the node budget: not a Lévy measure".into(),
            )),
        }
    }

    pub fn atoms_only(atoms: Vec<Atom>) -> Result<Self> {
        Self::new(atoms, None)
    }

    /// Widens the declared support; it must contain the actual one.
    pub fn with_declared_support(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !self.is_zero() && (lo > self.support_lo || hi < self.support_hi) {
            return Err(Error::InvalidInput(format!(
                "declared support [{lo}, {hi}] does not contain [{}, {}]",
                self.support_lo, self.support_hi
            )));
        }
        self.support_lo = lo;
        self.support_hi = hi;
        Ok(self)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.support_lo, self.support_hi)
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.density.is_none()
    }

    /// `∫ h(y) ν(dy)` over `range`: atoms exactly plus the density integral.
    pub fn integrate<F: Fn(f64) -> f64>(&self, h: F, range: (f64, f64), rel_tol: f64) -> QuadOutcome {
        let mut atom_sum = 0.0;
        for a in &self.atoms {
            if a.location >= range.0 && a.location <= range.1 {
                atom_sum += a.mass * h(a.location);
            }
        }
        let atoms = if atom_sum.is_finite() {
            QuadOutcome::Finite(atom_sum)
        } else {
            QuadOutcome::Infinite
        };
        match &self.density {
            Some(d) => atoms.add(d.integrate(h, range, rel_tol)),
            None => atoms,
        }
    }

    /// Points of `supp ν` used to test inequalities quantified over jump
    /// sizes: every atom, `quantiles` quantiles of the density part and the
    /// finite support endpoints, sorted and deduplicated.
    ///
    /// Quantiles are taken of the density restricted to `|y| ≥ 1e-6 (hi - lo)`
    /// with unbounded ends cut where the remaining mass falls below `1e-9` of
    /// the total, so measures with infinite activity still get a finite table.
    pub fn sample_points(&self, quantiles: usize) -> Vec<f64> {
        let mut pts: Vec<f64> = self.atoms.iter().map(|a| a.location).collect();
        if let Some(d) = &self.density {
            pts.extend(density_quantiles(d, quantiles));
        }
        if !self.is_zero() {
            for e in [self.support_lo, self.support_hi] {
                if e.is_finite() {
                    pts.push(e);
                }
            }
        }
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup();
        pts
    }

    fn levy_integrability(&self) -> QuadOutcome {
        self.integrate(|y| (y * y).min(1.0), (f64::NEG_INFINITY, f64::INFINITY), 1e-9)
    }

    /// `ν({|y| > eps})`.
    pub fn tail_mass(&self, eps: f64) -> QuadOutcome {
        self.integrate(
            |y| if y.abs() > eps { 1.0 } else { 0.0 },
            (f64::NEG_INFINITY, f64::INFINITY),
            1e-9,
        )
    }
}

/// Characteristic triplet of a one-dimensional Lévy process.
#[derive(Debug, Clone)]
pub struct LevyTriplet {
    pub a: f64,
    pub q: f64,
    pub nu: LevyMeasure,
    pub quad: QuadConfig,
}

/// `e^{-x} - 1 + x`, accurate for small `x`.
fn compensated_exp(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        x2 * (0.5 - x / 6.0 + x2 / 24.0)
    } else {
        (-x).exp_m1() + x
    }
}

fn j_kernel(z: f64, y: f64) -> f64 {
    if y.abs() < 1.0 {
        compensated_exp(z * y)
    } else {
        (-z * y).exp_m1()
    }
}

fn j1_kernel(z: f64, y: f64) -> f64 {
    if y.abs() < 1.0 {
        -y * (-z * y).exp_m1()
    } else {
        -y * (-z * y).exp()
    }
}

impl LevyTriplet {
    pub fn new(a: f64, q: f64, nu: LevyMeasure) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::InvalidInput(format!("drift a must be finite, got {a}")));
        }
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::InvalidInput(format!("Gaussian coefficient q must be >= 0, got {q}")));
        }
        Ok(Self {
            a,
            q,
            nu,
            quad: QuadConfig::default(),
        })
    }

    /// Standard Wiener process, `J(z) = z²/2`.
    pub fn wiener() -> Self {
        Self::new(0.0, 1.0, LevyMeasure::zero()).expect("valid")
    }

    pub fn pure_drift(a: f64) -> Result<Self> {
        Self::new(a, 0.0, LevyMeasure::zero())
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.quad.rel_tol = rel_tol;
        self
    }

    /// `∫_{(ε,1)} y ν(dy)` over `ε < |y| < 1` (signed).
    pub fn small_jump_drift(&self, eps: f64) -> Result<f64> {
        let out = self.nu.integrate(
            |y| if y.abs() > eps && y.abs() < 1.0 { y } else { 0.0 },
            (-1.0, 1.0),
            self.quad.rel_tol,
        );
        match out {
            QuadOutcome::Finite(v) => Ok(v),
            QuadOutcome::Infinite => Err(Error::InvalidInput(format!(
                "∫_(eps,1) y ν(dy) diverges for eps = {eps}"
            ))),
            QuadOutcome::Indeterminate => Err(Error::Indeterminate {
                z: 0.0,
                what: "small-jump drift",
            }),
        }
    }

    /// True iff `q = 0`, the support lies in `[0, ∞)` and the drift left
    /// after removing the small-jump compensation, `a - ∫_(0,1) y ν(dy)`, is
    /// nonnegative (finite variation required).
    pub fn is_subordinator(&self) -> bool {
        if self.q != 0.0 {
            return false;
        }
        if self.nu.is_zero() {
            return self.a >= 0.0;
        }
        if self.nu.support().0 < 0.0 {
            return false;
        }
        let m0 = self.nu.integrate(
            |y| if y > 0.0 && y < 1.0 { y } else { 0.0 },
            (0.0, 1.0),
            self.quad.rel_tol,
        );
        match m0 {
            QuadOutcome::Finite(m) => self.a - m >= 0.0,
            _ => false,
        }
    }

    /// Laplace exponent; `+∞` outside the domain `B`.
    pub fn laplace_exponent(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::InvalidInput(format!("z must be finite, got {z}")));
        }
        let base = -self.a * z + 0.5 * self.q * z * z;
        if self.nu.is_zero() {
            return Ok(base);
        }
        let jumps = self.nu.integrate(
            |y| j_kernel(z, y),
            (f64::NEG_INFINITY, f64::INFINITY),
            self.quad.rel_tol,
        );
        match jumps {
            QuadOutcome::Finite(v) => Ok(base + v),
            QuadOutcome::Infinite => Ok(f64::INFINITY),
            QuadOutcome::Indeterminate => Err(Error::Indeterminate {
                z,
                what: "Laplace exponent",
            }),
        }
    }

    /// Derivative of order 1, 2 or 3 of the Laplace exponent.
    pub fn laplace_derivative(&self, z: f64, order: u8) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::InvalidInput(format!("z must be finite, got {z}")));
        }
        let (base, what): (f64, &'static str) = match order {
            1 => (-self.a + self.q * z, "first derivative"),
            2 => (self.q, "second derivative"),
            3 => (0.0, "third derivative"),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "derivative order must be 1, 2 or 3, got {order}"
                )))
            }
        };
        if self.nu.is_zero() {
            return Ok(base);
        }
        let all = (f64::NEG_INFINITY, f64::INFINITY);
        let tol = self.quad.rel_tol;
        let jumps = match order {
            1 => self.nu.integrate(|y| j1_kernel(z, y), all, tol),
            2 => self.nu.integrate(|y| y * y * (-z * y).exp(), all, tol),
            _ => self.nu.integrate(|y| -y * y * y * (-z * y).exp(), all, tol),
        };
        match jumps {
            QuadOutcome::Finite(v) if v.is_finite() => Ok(base + v),
            QuadOutcome::Indeterminate => Err(Error::Indeterminate { z, what }),
            _ => Err(Error::Domain { z, what }),
        }
    }

    /// Moment, support and subordinator diagnostics for the Lévy measure.
    ///
    /// `exp_constant` is the constant `c` in `∫_{|y|≥1} y^k e^{c y} ν(dy) < ∞`
    /// (typically `K/√γ` from the volatility bound); those rows are skipped
    /// when it is `None`.
    pub fn check_moment_conditions(&self, exp_constant: Option<f64>) -> MomentReport {
        let tol = self.quad.rel_tol;
        let big = |h: &dyn Fn(f64) -> f64| -> Verdict {
            let neg = self.nu.integrate(h, (f64::NEG_INFINITY, -1.0), tol);
            let pos = self.nu.integrate(h, (1.0, f64::INFINITY), tol);
            outcome_verdict(neg.add(pos))
        };
        let (lo, _) = self.nu.support();
        let nonneg_support = self.nu.is_zero() || lo >= 0.0;
        let subordinator_integral = outcome_verdict(self.nu.integrate(
            |y| y.abs().max(y * y),
            (0.0, f64::INFINITY),
            tol,
        ));
        let subordinator_support = if self.q == 0.0 && nonneg_support {
            subordinator_integral
        } else {
            Verdict::Fail
        };
        MomentReport {
            levy_integrability: outcome_verdict(self.nu.levy_integrability()),
            second_moment: big(&|y| y * y),
            third_moment: big(&|y| y.abs().powi(3)),
            support_above_minus_one: if self.nu.is_zero() || lo >= -1.0 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            exp_moment_constant: exp_constant,
            exp_moment_second: exp_constant.map(|c| big(&|y| y * y * (c * y).exp())),
            exp_moment_third: exp_constant.map(|c| big(&|y| y.abs().powi(3) * (c * y).exp())),
            subordinator_support,
            subordinator: self.is_subordinator(),
        }
    }

    /// Builds the sampler for the ε-truncated process `Z^ε`.
    pub fn increment_sampler(&self, eps: f64) -> Result<IncrementSampler> {
        IncrementSampler::new(self, eps)
    }

    /// `n_steps` increments of `Z^ε` over steps of length `dt`.
    pub fn simulate_increments(
        &self,
        dt: f64,
        n_steps: usize,
        eps: f64,
        seed: u64,
    ) -> Result<IncrementSeries> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        let sampler = self.increment_sampler(eps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut increments = Vec::with_capacity(n_steps);
        let mut jumps = Vec::with_capacity(n_steps);
        let mut buf = Vec::new();
        for _ in 0..n_steps {
            let inc = sampler.sample(&mut rng, dt, &mut buf);
            increments.push(inc.total);
            jumps.push(buf.clone());
        }
        Ok(IncrementSeries {
            dt,
            eps,
            increments,
            jumps,
            drift_rate: sampler.drift_rate,
            jump_rate: sampler.jump_rate,
            pure_diffusion: sampler.pure_diffusion,
            dropped_variance: sampler.dropped_variance,
        })
    }
}

fn outcome_verdict(o: QuadOutcome) -> Verdict {
    match o {
        QuadOutcome::Finite(_) => Verdict::Pass,
        QuadOutcome::Infinite => Verdict::Fail,
        QuadOutcome::Indeterminate => Verdict::Indeterminate,
    }
}

/// Moment and support flags of a Lévy measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    /// `∫ (y² ∧ 1) ν(dy) < ∞`.
    pub levy_integrability: Verdict,
    /// `∫_{|y|≥1} y² ν(dy) < ∞`.
    pub second_moment: Verdict,
    /// `∫_{|y|≥1} |y|³ ν(dy) < ∞`.
    pub third_moment: Verdict,
    /// `supp ν ⊆ [-1, ∞)`.
    pub support_above_minus_one: Verdict,
    pub exp_moment_constant: Option<f64>,
    /// `∫_{|y|≥1} y² e^{c y} ν(dy) < ∞`.
    pub exp_moment_second: Option<Verdict>,
    /// `∫_{|y|≥1} |y|³ e^{c y} ν(dy) < ∞`.
    pub exp_moment_third: Option<Verdict>,
    /// `q = 0`, `supp ν ⊆ [0, ∞)` and `∫_0^∞ (|y| ∨ y²) ν(dy) < ∞`.
    pub subordinator_support: Verdict,
    /// Subordinator flag of the triplet (includes the drift sign).
    pub subordinator: bool,
}

impl MomentReport {
    /// Every finite-moment flag (integrability, second, third, exponential).
    pub fn all_moments_pass(&self) -> bool {
        [self.levy_integrability, self.second_moment, self.third_moment]
            .iter()
            .chain(self.exp_moment_second.iter())
            .chain(self.exp_moment_third.iter())
            .all(|v| *v == Verdict::Pass)
    }
}

/// One increment of `Z^ε` split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increment {
    pub total: f64,
    /// Drift plus Gaussian part.
    pub continuous: f64,
}

/// Increments of `Z^ε` with their jump marks.
#[derive(Debug, Clone)]
pub struct IncrementSeries {
    pub dt: f64,
    pub eps: f64,
    pub increments: Vec<f64>,
    /// Individual jump sizes within each step.
    pub jumps: Vec<Vec<f64>>,
    /// `a - m_ε`.
    pub drift_rate: f64,
    /// `ν({|y| > ε})`.
    pub jump_rate: f64,
    /// Set when no jump mass lies above `ε` although `ν ≠ 0`.
    pub pure_diffusion: bool,
    /// `∫_{|y|≤ε} y² ν(dy)`, the variance per unit time discarded by the cutoff.
    pub dropped_variance: f64,
}

#[derive(Debug, Clone)]
enum Piece {
    Exp { lambda: f64, a: f64, b: f64 },
    Uniform { a: f64, b: f64 },
    Table { xs: Vec<f64>, cdf: Vec<f64> },
}

impl Piece {
    fn sample(&self, u: f64) -> f64 {
        match self {
            Piece::Exp { lambda, a, b } => {
                if *lambda == 0.0 {
                    return a + u * (b - a);
                }
                let span = if b.is_finite() {
                    -(-lambda * (b - a)).exp_m1()
                } else {
                    1.0
                };
                a - (-u * span).ln_1p() / lambda
            }
            Piece::Uniform { a, b } => a + u * (b - a),
            Piece::Table { xs, cdf } => {
                let k = cdf.partition_point(|&c| c < u).clamp(1, xs.len() - 1);
                let (c0, c1) = (cdf[k - 1], cdf[k]);
                let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                xs[k - 1] + w * (xs[k] - xs[k - 1])
            }
        }
    }
}

/// Samples increments of the ε-truncated process
/// `Z^ε(t) = (a - m_ε) t + √q W(t) + Σ jumps with |y| > ε`,
/// where `m_ε = ∫_{ε<|y|<1} y ν(dy)`.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    pub q: f64,
    pub eps: f64,
    pub drift_rate: f64,
    pub jump_rate: f64,
    pub pure_diffusion: bool,
    pub dropped_variance: f64,
    /// Cumulative weights over atoms followed by density pieces.
    cumulative: Vec<f64>,
    atoms: Vec<f64>,
    pieces: Vec<Piece>,
}

impl IncrementSampler {
    fn new(t: &LevyTriplet, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
        }
        let m_eps = t.small_jump_drift(eps)?;
        let dropped_variance = match t.nu.integrate(
            |y| if y.abs() <= eps { y * y } else { 0.0 },
            (-eps, eps),
            t.quad.rel_tol,
        ) {
            QuadOutcome::Finite(v) => v,
            _ => f64::NAN,
        };

        let mut weights = Vec::new();
        let mut atoms = Vec::new();
        for a in t.nu.atoms() {
            if a.location.abs() > eps {
                weights.push(a.mass);
                atoms.push(a.location);
            }
        }
        let mut pieces = Vec::new();
        if let Some(d) = t.nu.density() {
            let mut spans = Vec::new();
            if d.lo < -eps {
                spans.push((d.lo, d.hi.min(-eps)));
            }
            if d.hi > eps {
                spans.push((d.lo.max(eps), d.hi));
            }
            for (a, b) in spans {
                if !(b > a) {
                    continue;
                }
                let (mass, piece) = density_piece(d, a, b, t.quad.rel_tol)?;
                if mass > 0.0 {
                    weights.push(mass);
                    pieces.push(piece);
                }
            }
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            q: t.q,
            eps,
            drift_rate: t.a - m_eps,
            jump_rate: acc,
            pure_diffusion: !t.nu.is_zero() && acc == 0.0,
            dropped_variance,
            cumulative,
            atoms,
            pieces,
        })
    }

    fn jump_size<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * self.jump_rate;
        let k = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        if k < self.atoms.len() {
            self.atoms[k]
        } else {
            let v: f64 = rng.random();
            self.pieces[k - self.atoms.len()].sample(v)
        }
    }

    /// Draws one increment over `dt`; the jump sizes are left in `jumps`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64, jumps: &mut Vec<f64>) -> Increment {
        jumps.clear();
        let mut continuous = self.drift_rate * dt;
        if self.q > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            continuous += (self.q * dt).sqrt() * n;
        }
        let mut total = continuous;
        if self.jump_rate > 0.0 {
            let count = Poisson::new(self.jump_rate * dt)
                .map(|p| p.sample(rng) as u64)
                .unwrap_or(0);
            for _ in 0..count {
                let y = self.jump_size(rng);
                jumps.push(y);
                total += y;
            }
        }
        Increment { total, continuous }
    }
}

fn density_piece(d: &Density, a: f64, b: f64, rel_tol: f64) -> Result<(f64, Piece)> {
    match &d.shape {
        DensityShape::ExpTilted { c, lambda } => {
            let lambda = *lambda;
            if !b.is_finite() && lambda <= 0.0 || !a.is_finite() && lambda >= 0.0 {
                return Err(Error::InvalidInput(
                    "exp_tilted density has infinite mass above the cutoff".into(),
                ));
            }
            if !a.is_finite() {
                // Mirror onto the positive axis: y = -u with u ~ c e^{λ u}.
                let (mass, piece) = density_piece(
                    &Density::exp_tilted(*c, -lambda).with_support(-b, -a),
                    -b,
                    -a,
                    rel_tol,
                )?;
                let flipped = match piece {
                    Piece::Exp { lambda, a, b } => {
                        let xs: Vec<f64> = table_grid(a, b, lambda);
                        let mut pts: Vec<(f64, f64)> = xs
                            .iter()
                            .map(|&x| (-x, exp_cdf(lambda, a, b, x)))
                            .collect();
                        pts.reverse();
                        let xs = pts.iter().map(|p| p.0).collect();
                        let cdf = pts.iter().map(|p| 1.0 - p.1).collect();
                        Piece::Table { xs, cdf }
                    }
                    other => other,
                };
                return Ok((mass, flipped));
            }
            let mass = if lambda == 0.0 {
                c * (b - a)
            } else if b.is_finite() {
                -c / lambda * (-lambda * a).exp() * (-lambda * (b - a)).exp_m1()
            } else {
                c / lambda * (-lambda * a).exp()
            };
            Ok((mass, Piece::Exp { lambda, a, b }))
        }
        DensityShape::Uniform { c } => Ok((c * (b - a), Piece::Uniform { a, b })),
        DensityShape::Custom { .. } => {
            let total = match d.integrate(|_| 1.0, (a, b), rel_tol) {
                QuadOutcome::Finite(v) => v,
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "density '{}' has no finite mass on [{a}, {b}]",
                        d.name()
                    )))
                }
            };
            // Truncate unbounded ends where the remaining mass is negligible.
            let mut lo = a;
            let mut hi = b;
            if !hi.is_finite() {
                hi = lo.abs().max(1.0) * 2.0;
                while let QuadOutcome::Finite(rest) = d.integrate(|_| 1.0, (hi, f64::INFINITY), rel_tol) {
                    if rest <= 1e-12 * total || hi > 1e12 {
                        break;
                    }
                    hi *= 2.0;
                }
            }
            if !lo.is_finite() {
                lo = -(hi.abs().max(1.0) * 2.0);
                while let QuadOutcome::Finite(rest) = d.integrate(|_| 1.0, (f64::NEG_INFINITY, lo), rel_tol) {
                    if rest <= 1e-12 * total || lo < -1e12 {
                        break;
                    }
                    lo *= 2.0;
                }
            }
            let n = 4096;
            let xs: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
            let mut cdf = vec![0.0; xs.len()];
            for k in 1..xs.len() {
                let (x0, x1) = (xs[k - 1], xs[k]);
                cdf[k] = cdf[k - 1] + 0.5 * (d.value(x0) + d.value(x1)) * (x1 - x0);
            }
            let last = *cdf.last().unwrap();
            if !(last > 0.0) {
                return Ok((0.0, Piece::Uniform { a: lo, b: hi }));
            }
            for c in cdf.iter_mut() {
                *c /= last;
            }
            Ok((total, Piece::Table { xs, cdf }))
        }
    }
}

fn density_quantiles(d: &Density, k: usize) -> Vec<f64> {
    if k == 0 {
        return Vec::new();
    }
    let tol = 1e-9;
    let mass = |lo: f64, hi: f64| match d.integrate(|_| 1.0, (lo, hi), 1e-9) {
        QuadOutcome::Finite(v) => Some(v),
        _ => None,
    };
    let mut lo = d.lo;
    let mut hi = d.hi;
    let core = mass(lo.max(-1.0), hi.min(1.0)).unwrap_or(1.0).max(f64::MIN_POSITIVE);
    if !hi.is_finite() {
        hi = lo.max(1.0);
        while hi < 1e12 {
            match mass(hi, f64::INFINITY) {
                Some(rest) if rest <= tol * core => break,
                _ => hi *= 2.0,
            }
        }
    }
    if !lo.is_finite() {
        lo = hi.min(-1.0);
        while lo > -1e12 {
            match mass(f64::NEG_INFINITY, lo) {
                Some(rest) if rest <= tol * core => break,
                _ => lo *= 2.0,
            }
        }
    }
    let n = 4096;
    let floor = 1e-6 * (hi - lo);
    let xs: Vec<f64> = (0..=n).map(|j| lo + (hi - lo) * j as f64 / n as f64).collect();
    let w = |y: f64| if y.abs() < floor { 0.0 } else { d.value(y) };
    let mut cdf = vec![0.0; xs.len()];
    for j in 1..xs.len() {
        cdf[j] = cdf[j - 1] + 0.5 * (w(xs[j - 1]) + w(xs[j])) * (xs[j] - xs[j - 1]);
    }
    let total = cdf[n];
    if !(total > 0.0) || !total.is_finite() {
        return Vec::new();
    }
    (0..k)
        .map(|q| {
            let p = (q as f64 + 0.5) / k as f64 * total;
            let j = cdf.partition_point(|&c| c < p).clamp(1, n);
            let (c0, c1) = (cdf[j - 1], cdf[j]);
            let f = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.5 };
            xs[j - 1] + f * (xs[j] - xs[j - 1])
        })
        .collect()
}

fn exp_cdf(lambda: f64, a: f64, b: f64, x: f64) -> f64 {
    if lambda == 0.0 {
        return (x - a) / (b - a);
    }
    let num = (-lambda * (x - a)).exp_m1();
    let den = if b.is_finite() { (-lambda * (b - a)).exp_m1() } else { -1.0 };
    num / den
}

fn table_grid(a: f64, b: f64, lambda: f64) -> Vec<f64> {
    let hi = if b.is_finite() { b } else { a + 40.0 / lambda.abs().max(1e-12) };
    let n = 4096;
    (0..=n).map(|k| a + (hi - a) * k as f64 / n as f64).collect()
}

/// Fast evaluator of `J'` for the drift: closed form when the measure is
/// atomic, otherwise a cubic Hermite table on a fixed range with direct
/// quadrature outside it.
#[derive(Debug, Clone)]
pub struct JPrime {
    triplet: LevyTriplet,
    table: Option<HermiteTable>,
}

#[derive(Debug, Clone)]
struct HermiteTable {
    lo: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    fn eval(&self, x: f64) -> Option<f64> {
        let s = (x - self.lo) / self.step;
        let n = self.values.len() - 1;
        if !(s >= 0.0) || s > n as f64 {
            return None;
        }
        let k = (s.floor() as usize).min(n - 1);
        let u = s - k as f64;
        let (p0, p1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.step, self.slopes[k + 1] * self.step);
        let u2 = u * u;
        let u3 = u2 * u;
        Some(
            (2.0 * u3 - 3.0 * u2 + 1.0) * p0
                + (u3 - 2.0 * u2 + u) * m0
                + (-2.0 * u3 + 3.0 * u2) * p1
                + (u3 - u2) * m1,
        )
    }
}

impl JPrime {
    /// Tabulates over `[lo, hi]` (ignored for atomic measures). The table is
    /// clipped to the contiguous part of the range around 0 where `J'` exists.
    pub fn new(triplet: &LevyTriplet, lo: f64, hi: f64) -> Result<Self> {
        if triplet.nu.density().is_none() {
            return Ok(Self {
                triplet: triplet.clone(),
                table: None,
            });
        }
        let nodes = 2048;
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        if !(hi > lo) {
            return Ok(Self {
                triplet: triplet.clone(),
                table: None,
            });
        }
        let step = (hi - lo) / nodes as f64;
        let mut values = Vec::with_capacity(nodes + 1);
        let mut slopes = Vec::with_capacity(nodes + 1);
        let mut first_ok = None;
        let mut last_ok = None;
        for k in 0..=nodes {
            let x = lo + step * k as f64;
            let v = triplet.laplace_derivative(x, 1);
            let s = triplet.laplace_derivative(x, 2);
            match (v, s) {
                (Ok(v), Ok(s)) => {
                    values.push(v);
                    slopes.push(s);
                    if first_ok.is_none() {
                        first_ok = Some(k);
                    }
                    last_ok = Some(k);
                }
                (Err(e @ Error::Indeterminate { .. }), _) | (_, Err(e @ Error::Indeterminate { .. })) => {
                    return Err(e)
                }
                _ => {
                    values.push(f64::NAN);
                    slopes.push(f64::NAN);
                }
            }
        }
        // Keep the contiguous finite block containing 0.
        let zero = ((0.0 - lo) / step).round() as usize;
        let mut a = zero;
        while a > 0 && values[a - 1].is_finite() {
            a -= 1;
        }
        let mut b = zero;
        while b + 1 <= nodes && values[b + 1].is_finite() {
            b += 1;
        }
        let table = if first_ok.is_some() && last_ok.is_some() && values[zero].is_finite() && b > a {
            Some(HermiteTable {
                lo: lo + step * a as f64,
                step,
                values: values[a..=b].to_vec(),
                slopes: slopes[a..=b].to_vec(),
            })
        } else {
            None
        };
        Ok(Self {
            triplet: triplet.clone(),
            table,
        })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if let Some(t) = &self.table {
            if let Some(v) = t.eval(x) {
                return Ok(v);
            }
            return self.triplet.laplace_derivative(x, 1);
        }
        if self.triplet.nu.density().is_none() {
            let mut v = -self.triplet.a + self.triplet.q * x;
            for at in self.triplet.nu.atoms() {
                v += at.mass * j1_kernel(x, at.location);
            }
            if !v.is_finite() {
                return Err(Error::Domain {
                    z: x,
                    what: "first derivative",
                });
            }
            return Ok(v);
        }
        self.triplet.laplace_derivative(x, 1)
    }
}
