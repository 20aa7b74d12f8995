//! Adaptive Gauss–Legendre quadrature on dyadic panels, with expanding-panel
//! integration of half-line tails and a growth test for divergence.

use std::sync::OnceLock;

const GL_ORDER: usize = 16;
const MAX_DEPTH: u32 = 56;

/// Quadrature settings shared by every Lévy-measure integral.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct QuadConfig {
    /// Relative tolerance for panel acceptance and tail convergence.
    pub rel_tol: f64,
    /// Maximum number of integrand evaluations per integral.
    pub node_budget: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            node_budget: 1 << 14,
        }
    }
}

/// Result of integrating over a possibly unbounded range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadOutcome {
    Finite(f64),
    /// The partial integrals grow without bound (or overflow).
    Infinite,
    /// The node budget ran out before convergence or divergence was decided.
    Indeterminate,
}

impl QuadOutcome {
    pub fn add(self, other: QuadOutcome) -> QuadOutcome {
        use QuadOutcome::*;
        match (self, other) {
            (Indeterminate, _) | (_, Indeterminate) => Indeterminate,
            (Infinite, _) | (_, Infinite) => Infinite,
            (Finite(a), Finite(b)) => Finite(a + b),
        }
    }
}

fn gauss_legendre() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static RULE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut nodes = [0.0; GL_ORDER];
        let mut weights = [0.0; GL_ORDER];
        for i in 0..n {
            // Chebyshev-like initial guess, refined by Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// Counts integrand evaluations against the node budget.
#[derive(Debug)]
pub(crate) struct Budget {
    used: usize,
    max: usize,
}

impl Budget {
    pub(crate) fn new(max: usize) -> Self {
        Self { used: 0, max }
    }

    fn take(&mut self, n: usize) -> bool {
        self.used += n;
        self.used <= self.max
    }
}

fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    abs_tol: f64,
    depth: u32,
    budget: &mut Budget,
) -> Option<f64> {
    if !budget.take(2 * GL_ORDER) {
        return None;
    }
    let mid = 0.5 * (a + b);
    let left = gl_panel(f, a, mid);
    let right = gl_panel(f, mid, b);
    let refined = left + right;
    if !refined.is_finite() {
        return Some(refined);
    }
    let diff = (refined - whole).abs();
    if diff <= abs_tol || diff <= 1e-300 {
        return Some(refined);
    }
    if depth >= MAX_DEPTH {
        return None;
    }
    let l = adaptive(f, a, mid, left, abs_tol, depth + 1, budget)?;
    let r = adaptive(f, mid, b, right, abs_tol, depth + 1, budget)?;
    Some(l + r)
}

/// Integrates `f` over the finite interval `[a, b]`, refining panels until
/// each meets `rel_tol` times a first estimate of `∫|f|`. Returns `None` when
/// the budget or the bisection depth is exhausted.
pub(crate) fn integrate_finite<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
    budget: &mut Budget,
) -> Option<f64> {
    if !(b > a) {
        return Some(0.0);
    }
    if !budget.take(GL_ORDER) {
        return None;
    }
    let whole = gl_panel(f, a, b);
    let scale = gl_panel(&|x| f(x).abs(), a, b);
    adaptive(f, a, b, whole, cfg.rel_tol * scale, 0, budget)
}

/// Integrates `f` over `[start, +inf)` (`direction = 1.0`) or `(-inf, start]`
/// (`direction = -1.0`) on panels whose far edge doubles each time.
///
/// Divergence is declared when, on two consecutive panels, the accumulated
/// absolute mass has grown by more than a factor 10 across two doublings and
/// the panel-to-panel growth ratio has not decreased. The second clause keeps
/// integrands like `y² e^{-y/2}`, whose panels grow before the peak, from being
/// flagged. Convergence is declared when two consecutive panels fall below
/// `rel_tol` of the running total `offset + tail`.
pub(crate) fn integrate_tail<F: Fn(f64) -> f64>(
    f: &F,
    start: f64,
    direction: f64,
    offset: f64,
    cfg: &QuadConfig,
    budget: &mut Budget,
) -> QuadOutcome {
    let s0 = start.abs().max(1.0);
    let mut lo = start.abs();
    let mut hi = 2.0 * s0;
    let mut total = 0.0;
    let mut mass_hist: Vec<f64> = Vec::new();
    let mut panels: Vec<f64> = Vec::new();
    let mut small_streak = 0;
    let mut growth_streak = 0;
    let g = |u: f64| f(direction * u);
    loop {
        let panel = match integrate_finite(&g, lo, hi, cfg, budget) {
            Some(v) => v,
            None => return QuadOutcome::Indeterminate,
        };
        if !panel.is_finite() {
            return QuadOutcome::Infinite;
        }
        total += panel;
        let mass = mass_hist.last().copied().unwrap_or(0.0) + panel.abs();
        mass_hist.push(mass);
        panels.push(panel.abs());
        let k = mass_hist.len();
        let mut growing = false;
        if k >= 3 {
            let earlier = mass_hist[k - 3];
            let (p0, p1, p2) = (panels[k - 3], panels[k - 2], panels[k - 1]);
            let accelerating = p0 > 0.0 && p1 > 0.0 && p2 / p1 >= p1 / p0;
            growing = earlier > 1e-300 && mass > 10.0 * earlier && accelerating;
        }
        growth_streak = if growing { growth_streak + 1 } else { 0 };
        if growth_streak >= 2 {
            return QuadOutcome::Infinite;
        }
        let scale = (offset + total).abs().max(mass);
        if panel.abs() <= cfg.rel_tol * scale || scale == 0.0 && panel == 0.0 {
            small_streak += 1;
        } else {
            small_streak = 0;
        }
        if small_streak >= 2 {
            return QuadOutcome::Finite(total);
        }
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return QuadOutcome::Indeterminate;
        }
    }
}
