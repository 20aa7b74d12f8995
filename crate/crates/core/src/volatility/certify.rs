//! Sampling certification of the positivity conditions (P1), (P2), the
//! monotonicity conditions (M1), (M2) and their derivative forms.
//!
//! Every condition is written as `lhs ≤ rhs` at a sample point. A point fails
//! when `lhs - rhs > 1e-10 (1 + max(|lhs|, |rhs|))`; the worst failing point is
//! returned as the witness.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::VolatilitySpec;
use crate::levy::LevyTriplet;
use crate::statespace::RatingLadder;
use crate::Verdict;

/// Relative slack for floating-point noise in the inequalities.
pub const INEQUALITY_TOL: f64 = 1e-10;
/// Density quantiles added to the jump-size samples.
pub const JUMP_QUANTILES: usize = 64;

const CHUNK: usize = 2048;
/// Cap on tensor-grid points before the `r` axes are coarsened.
const MAX_TENSOR_POINTS: usize = 2_000_000;

/// Boxes over which the conditions are sampled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingBoxes {
    pub t: (f64, f64),
    pub z: (f64, f64),
    /// Loss levels.
    pub l: Vec<f64>,
    /// `r ∈ [0, r_max]^n`.
    pub r_max: f64,
    pub points_per_axis: usize,
    /// Extra Latin-hypercube points.
    pub lhs_points: usize,
    pub seed: u64,
}

impl SamplingBoxes {
    /// `t, z ∈ [0, z_max]`, `l ∈ {0} ∪ ladder`, `r ∈ [0, 5]^n`, 9 points per
    /// axis and 1000 Latin-hypercube points.
    pub fn new(z_max: f64, ladder: &RatingLadder, seed: u64) -> Self {
        let mut l = vec![0.0];
        l.extend(ladder.xs().iter().copied().filter(|&x| x > 0.0));
        Self {
            t: (0.0, z_max),
            z: (0.0, z_max),
            l,
            r_max: 5.0,
            points_per_axis: 9,
            lhs_points: 1000,
            seed,
        }
    }

    /// Next nested resolution: `m → 2m - 1` points per axis, same
    /// Latin-hypercube points.
    pub fn refined(&self) -> Self {
        Self {
            points_per_axis: 2 * self.points_per_axis.max(2) - 1,
            ..self.clone()
        }
    }
}

/// A point where a condition's inequality fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub i: usize,
    pub t: f64,
    pub z: f64,
    pub l: f64,
    pub r: Vec<f64>,
    pub u: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`.
    pub violation: f64,
}

/// Outcome of one condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub condition: String,
    pub verdict: Verdict,
    /// Inequality evaluations.
    pub samples: usize,
    /// Largest `lhs - rhs` seen.
    pub max_violation: f64,
    /// Worst failing point; set whenever the verdict is `fail`.
    pub witness: Option<Witness>,
    /// Points whose derivative estimate was unstable.
    pub unstable_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionResult {
    fn vacuous(name: &str, note: &str) -> Self {
        Self {
            condition: name.to_string(),
            verdict: Verdict::Pass,
            samples: 0,
            max_violation: f64::NEG_INFINITY,
            witness: None,
            unstable_points: 0,
            note: Some(note.to_string()),
        }
    }
}

/// Results of one certification call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub conditions: Vec<ConditionResult>,
    /// Jump sizes `u` tested, as `[min, max]`.
    pub u_range: Option<(f64, f64)>,
    pub u_samples: usize,
    /// Points per `r` axis actually used (coarsened for large ladders).
    pub r_points_per_axis: usize,
    /// For derivative checks: the monotonicity clauses that hold for every
    /// rating pair.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub m2_clauses: Vec<String>,
}

impl CertificationReport {
    pub fn get(&self, condition: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    pub fn verdict(&self, condition: &str) -> Option<Verdict> {
        self.get(condition).map(|c| c.verdict)
    }

    pub fn overall(&self) -> Verdict {
        self.conditions
            .iter()
            .fold(Verdict::Pass, |acc, c| acc.and(c.verdict))
    }

    pub fn merge(mut self, other: CertificationReport) -> Self {
        self.conditions.extend(other.conditions);
        self.m2_clauses.extend(other.m2_clauses);
        self
    }
}

#[inline]
fn excess(lhs: f64, rhs: f64) -> (f64, bool) {
    let v = lhs - rhs;
    let scale = lhs.abs().max(rhs.abs());
    let tol = INEQUALITY_TOL * (1.0 + if scale.is_finite() { scale } else { 0.0 });
    (v, v > tol || v.is_nan())
}

/// Running maximum of `lhs - rhs`, keeping the earliest worst point.
#[derive(Debug, Clone, Default)]
struct Acc {
    samples: usize,
    max_violation: Option<f64>,
    worst_fail: Option<Witness>,
    unstable: usize,
}

struct PointCtx<'a> {
    t: f64,
    z: f64,
    l: f64,
    r: &'a [f64],
}

impl Acc {
    fn record(&mut self, p: &PointCtx<'_>, i: usize, u: Option<f64>, lhs: f64, rhs: f64) {
        self.samples += 1;
        let (v, fails) = excess(lhs, rhs);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if self.max_violation.is_none_or(|m| v > m) {
            self.max_violation = Some(v);
        }
        if fails && self.worst_fail.as_ref().is_none_or(|w| v > w.violation) {
            self.worst_fail = Some(Witness {
                i,
                t: p.t,
                z: p.z,
                l: p.l,
                r: p.r.to_vec(),
                u,
                lhs,
                rhs,
                violation: v,
            });
        }
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.samples += other.samples;
        self.unstable += other.unstable;
        self.max_violation = match (self.max_violation, other.max_violation) {
            (Some(a), Some(b)) => Some(if b > a { b } else { a }),
            (a, b) => a.or(b),
        };
        self.worst_fail = match (self.worst_fail, other.worst_fail) {
            (Some(a), Some(b)) => Some(if b.violation > a.violation { b } else { a }),
            (a, b) => a.or(b),
        };
        self
    }

    fn finish(self, name: &str, note: Option<String>) -> ConditionResult {
        let verdict = if self.worst_fail.is_some() {
            Verdict::Fail
        } else if self.unstable > 0 {
            Verdict::Indeterminate
        } else {
            Verdict::Pass
        };
        ConditionResult {
            condition: name.to_string(),
            verdict,
            samples: self.samples,
            max_violation: self.max_violation.unwrap_or(f64::NEG_INFINITY),
            witness: self.worst_fail,
            unstable_points: self.unstable,
            note,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub t: f64,
    pub z: f64,
    pub l: f64,
    pub r: Vec<f64>,
}

impl Point {
    fn ctx(&self) -> PointCtx<'_> {
        PointCtx {
            t: self.t,
            z: self.z,
            l: self.l,
            r: &self.r,
        }
    }
}

pub(crate) fn axis(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..m)
        .map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64)
        .collect()
}

/// Largest nested level `2^k + 1 ≤ m` (or `m` itself) keeping the tensor
/// grid under the cap.
fn r_points(base: usize, n: usize, m: usize) -> usize {
    let mut mr = m.max(1);
    while mr > 2 && base.saturating_mul(mr.saturating_pow(n as u32)) > MAX_TENSOR_POINTS {
        mr = (mr - 1) / 2 + 1;
    }
    mr
}

fn tensor_r(values: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(n)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * values.len());
        for prefix in &out {
            for &v in values {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Nonincreasing sequences of length `n` over `values` (ascending input).
fn ordered_r(values: &[f64], n: usize) -> Vec<Vec<f64>> {
    fn rec(values: &[f64], n: usize, max_idx: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for k in (0..=max_idx).rev() {
            cur.push(values[k]);
            rec(values, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if !values.is_empty() {
        rec(values, n, values.len() - 1, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

fn lhs_points(boxes: &SamplingBoxes, n: usize) -> Vec<Point> {
    let k = boxes.lhs_points;
    if k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(boxes.seed);
    let dims = 3 + n;
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        cols.push(
            perm.iter()
                .map(|&p| (p as f64 + rng.random::<f64>()) / k as f64)
                .collect(),
        );
    }
    let lerp = |(lo, hi): (f64, f64), u: f64| lo + (hi - lo) * u;
    (0..k)
        .map(|j| {
            let li = ((cols[2][j] * boxes.l.len() as f64) as usize).min(boxes.l.len().saturating_sub(1));
            Point {
                t: lerp(boxes.t, cols[0][j]),
                z: lerp(boxes.z, cols[1][j]),
                l: boxes.l.get(li).copied().unwrap_or(0.0),
                r: (0..n).map(|d| boxes.r_max * cols[3 + d][j]).collect(),
            }
        })
        .collect()
}

/// Tensor grid over `(t, z, l, r)` plus Latin-hypercube points. With
/// `ordered`, `r` runs over nonincreasing vectors only.
pub(crate) fn sample_points(boxes: &SamplingBoxes, n: usize, ordered: bool) -> (Vec<Point>, usize) {
    let m = boxes.points_per_axis.max(1);
    let ts = axis(boxes.t.0, boxes.t.1, m);
    let zs = axis(boxes.z.0, boxes.z.1, m);
    let ls = if boxes.l.is_empty() { vec![0.0] } else { boxes.l.clone() };
    let base = ts.len() * zs.len() * ls.len();
    let mr = r_points(base, n, m);
    let rv = axis(0.0, boxes.r_max, mr);
    let rs = if ordered { ordered_r(&rv, n) } else { tensor_r(&rv, n) };
    let mut pts = Vec::with_capacity(base * rs.len() + boxes.lhs_points);
    for &t in &ts {
        for &z in &zs {
            for &l in &ls {
                for r in &rs {
                    pts.push(Point { t, z, l, r: r.clone() });
                }
            }
        }
    }
    for mut p in lhs_points(boxes, n) {
        if ordered {
            p.r.sort_by(|a, b| b.total_cmp(a));
        }
        pts.push(p);
    }
    (pts, mr)
}

fn scan<F>(points: &[Point], f: F) -> Acc
where
    F: Fn(&Point, &mut Acc, &mut Vec<f64>) + Sync,
{
    points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Acc::default();
            let mut buf = Vec::new();
            for p in chunk {
                f(p, &mut acc, &mut buf);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::default(), Acc::merge)
}

fn jump_samples(triplet: &LevyTriplet) -> (Vec<f64>, Option<(f64, f64)>) {
    let us = triplet.nu.sample_points(JUMP_QUANTILES);
    let range = if us.is_empty() {
        None
    } else {
        Some((us[0], us[us.len() - 1]))
    };
    (us, range)
}

fn unbounded_note(triplet: &LevyTriplet, range: Option<(f64, f64)>) -> Option<String> {
    let (lo, hi) = triplet.nu.support();
    if triplet.nu.is_zero() || (lo.is_finite() && hi.is_finite()) {
        return None;
    }
    range.map(|(a, b)| format!("unbounded jump support; tested u in [{a}, {b}]"))
}

/// (P1) `g_i = 0` whenever `r_i = 0`; (P2) `r_i + g_i u ≥ 0` for `r ≥ 0`
/// and `u ∈ supp ν`.
pub fn check_p1_p2(spec: &VolatilitySpec, triplet: &LevyTriplet, boxes: &SamplingBoxes) -> CertificationReport {
    let n = spec.n();
    let (points, mr) = sample_points(boxes, n, false);
    let (us, u_range) = jump_samples(triplet);

    let p1 = scan(&points, |p, acc, buf| {
        let mut r = p.r.clone();
        for i in 0..n {
            let saved = r[i];
            r[i] = 0.0;
            let g = spec.g_unchecked(i, p.t, p.z, p.l, &r);
            let ctx = PointCtx { r: &r, ..p.ctx() };
            acc.record(&ctx, i, None, g.abs(), 0.0);
            r[i] = saved;
        }
        let _ = buf;
    })
    .finish("P1", None);

    let p2 = if us.is_empty() {
        ConditionResult::vacuous("P2", "no jumps: holds vacuously")
    } else {
        scan(&points, |p, acc, buf| {
            buf.resize(n, 0.0);
            spec.eval_all(p.t, p.z, p.l, &p.r, buf);
            let ctx = p.ctx();
            for i in 0..n {
                for &u in &us {
                    acc.record(&ctx, i, Some(u), -(p.r[i] + buf[i] * u), 0.0);
                }
            }
        })
        .finish("P2", unbounded_note(triplet, u_range))
    };

    CertificationReport {
        conditions: vec![p1, p2],
        u_range,
        u_samples: us.len(),
        r_points_per_axis: mr,
        m2_clauses: Vec::new(),
    }
}

/// (M1) `g_i = g_{i+1}` when `r_i = r_{i+1}`; (M2)
/// `(g_{i+1} - g_i) u ≤ r_i - r_{i+1}` for `r_1 ≥ ... ≥ r_n`, `u ∈ supp ν`.
pub fn check_m1_m2(spec: &VolatilitySpec, triplet: &LevyTriplet, boxes: &SamplingBoxes) -> CertificationReport {
    let n = spec.n();
    let (points, mr) = sample_points(boxes, n, true);
    let (us, u_range) = jump_samples(triplet);

    let m1 = if n < 2 {
        ConditionResult::vacuous("M1", "single rating")
    } else {
        scan(&points, |p, acc, buf| {
            buf.resize(n, 0.0);
            let mut r = p.r.clone();
            for i in 0..n - 1 {
                let saved = r[i + 1];
                r[i + 1] = r[i];
                spec.eval_all(p.t, p.z, p.l, &r, buf);
                let ctx = PointCtx { r: &r, ..p.ctx() };
                acc.record(&ctx, i, None, (buf[i] - buf[i + 1]).abs(), 0.0);
                r[i + 1] = saved;
            }
        })
        .finish("M1", None)
    };

    let m2 = if n < 2 {
        ConditionResult::vacuous("M2", "single rating")
    } else if us.is_empty() {
        ConditionResult::vacuous("M2", "no jumps: holds vacuously")
    } else {
        scan(&points, |p, acc, buf| {
            buf.resize(n, 0.0);
            spec.eval_all(p.t, p.z, p.l, &p.r, buf);
            let ctx = p.ctx();
            for i in 0..n - 1 {
                let d = buf[i + 1] - buf[i];
                let rhs = p.r[i] - p.r[i + 1];
                for &u in &us {
                    acc.record(&ctx, i, Some(u), d * u, rhs);
                }
            }
        })
        .finish("M2", unbounded_note(triplet, u_range))
    };

    CertificationReport {
        conditions: vec![m1, m2],
        u_range,
        u_samples: us.len(),
        r_points_per_axis: mr,
        m2_clauses: Vec::new(),
    }
}

/// Base step of the numerical derivatives.
const DERIV_STEP: f64 = 1e-6;
/// Relative disagreement between step sizes that makes an estimate unstable.
const DERIV_AGREEMENT: f64 = 1e-4;

/// Derivative along coordinate `j` with the Richardson stability check over
/// steps `{1, 4, 16} × 1e-6 (1 + |r_j|)`. `one_sided` uses the second-order
/// forward formula (for the boundary `r_j = 0`). `None` when the three
/// estimates disagree.
pub(crate) fn partial<F: Fn(&[f64]) -> f64>(f: &F, r: &[f64], j: usize, one_sided: bool) -> Option<f64> {
    let mut x = r.to_vec();
    let base = r[j];
    let mut at = |v: f64| {
        x[j] = v;
        f(&x)
    };
    let f0 = at(base);
    let mut est = [0.0; 3];
    for (k, mult) in [1.0, 4.0, 16.0].iter().enumerate() {
        let h = DERIV_STEP * mult * (1.0 + base.abs());
        est[k] = if one_sided {
            (-3.0 * f0 + 4.0 * at(base + h) - at(base + 2.0 * h)) / (2.0 * h)
        } else {
            (at(base + h) - at(base - h)) / (2.0 * h)
        };
    }
    let d = est[0];
    let floor = 1e-7 * (1.0 + f0.abs());
    let spread = (est[1] - d).abs().max((est[2] - d).abs());
    if !d.is_finite() || spread > DERIV_AGREEMENT * d.abs() + floor {
        None
    } else {
        Some(d)
    }
}

/// Derivative forms of the conditions.
///
/// * `support_lower_bound` (necessary for P1 ∧ P2 with `g ≥ 0`): `supp ν ⊆
///   [-1/S, ∞)` with `S = sup ∂g_i/∂r_i` taken at `1_i(r)`, the vector `r`
///   with `r_i` set to 0 (one-sided derivative, since `r ≥ 0`).
/// * `tangent_bound` (with P1 and the support bound, sufficient for P2):
///   `g_i(r) ≤ ∂g_i/∂r_i(1_i(r)) r_i` with a nonnegative derivative.
/// * `diagonal_slope_own`, `diagonal_slope_next` (necessary for M1 ∧ M2): on
///   `r_i = r_{i+1}`, `∂_{r_i}[g_{i+1} - g_i] u ≤ 1` and
///   `-∂_{r_{i+1}}[g_{i+1} - g_i] u ≤ 1`. The second is the limit of (M2) as
///   `r_{i+1} ↑ r_i`, which carries the minus sign.
/// * `m2_clause`: one of the concavity/convexity clauses holds for each pair:
///   (i) `g_{i+1} - g_i` concave in `r_i` and `supp ν ⊆ (0, ∞)`; (ii) convex
///   and `supp ν ⊆ (-∞, 0)`; (iii) concave and `g_{i+1} ≥ g_i`; (iv) convex
///   and `g_{i+1} ≤ g_i`. Together with M1 and `diagonal_slope_own` this
///   certifies M2.
pub fn check_derivative_conditions(
    spec: &VolatilitySpec,
    triplet: &LevyTriplet,
    boxes: &SamplingBoxes,
) -> CertificationReport {
    let n = spec.n();
    let (points, mr) = sample_points(boxes, n, false);
    let (ordered, _) = sample_points(boxes, n, true);
    let (us, u_range) = jump_samples(triplet);
    let (support_lo, support_hi) = triplet.nu.support();

    // S = sup over points of ∂g_i/∂r_i at 1_i(r).
    let slope_acc = points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut best: Option<(f64, usize, Point)> = None;
            let mut unstable = 0usize;
            for p in chunk {
                let mut r = p.r.clone();
                for i in 0..n {
                    r[i] = 0.0;
                    let g = |x: &[f64]| spec.g_unchecked(i, p.t, p.z, p.l, x);
                    match partial(&g, &r, i, true) {
                        Some(d) => {
                            if best.as_ref().is_none_or(|b| d > b.0) {
                                best = Some((d, i, Point { r: r.clone(), ..p.clone() }));
                            }
                        }
                        None => unstable += 1,
                    }
                    r[i] = p.r[i];
                }
            }
            (best, unstable)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((None::<(f64, usize, Point)>, 0usize), |(a, ua), (b, ub)| {
            let best = match (a, b) {
                (Some(a), Some(b)) => Some(if b.0 > a.0 { b } else { a }),
                (a, b) => a.or(b),
            };
            (best, ua + ub)
        });

    let support = {
        let (best, unstable) = slope_acc;
        let sup_slope = best.as_ref().map_or(0.0, |b| b.0);
        let mut acc = Acc {
            unstable,
            ..Acc::default()
        };
        if triplet.nu.is_zero() {
            ConditionResult::vacuous("support_lower_bound", "no jumps: holds vacuously")
        } else {
            if let Some((s, i, p)) = best {
                if s > 0.0 {
                    // -1/S ≤ inf supp ν
                    acc.record(&p.ctx(), i, Some(support_lo), -1.0 / s, support_lo);
                } else {
                    acc.samples += 1;
                    acc.max_violation = Some(f64::NEG_INFINITY);
                }
            }
            acc.finish("support_lower_bound", Some(slope_note(sup_slope)))
        }
    };

    let tangent = scan(&points, |p, acc, buf| {
        buf.resize(n, 0.0);
        spec.eval_all(p.t, p.z, p.l, &p.r, buf);
        let ctx = p.ctx();
        let mut r = p.r.clone();
        for i in 0..n {
            r[i] = 0.0;
            let g = |x: &[f64]| spec.g_unchecked(i, p.t, p.z, p.l, x);
            match partial(&g, &r, i, true) {
                Some(d) => {
                    acc.record(&ctx, i, None, -d, 0.0);
                    acc.record(&ctx, i, None, buf[i], d * p.r[i]);
                }
                None => acc.unstable += 1,
            }
            r[i] = p.r[i];
        }
    })
    .finish("tangent_bound", None);

    let (own, next) = if n < 2 {
        (
            ConditionResult::vacuous("diagonal_slope_own", "single rating"),
            ConditionResult::vacuous("diagonal_slope_next", "single rating"),
        )
    } else if us.is_empty() {
        (
            ConditionResult::vacuous("diagonal_slope_own", "no jumps: holds vacuously"),
            ConditionResult::vacuous("diagonal_slope_next", "no jumps: holds vacuously"),
        )
    } else {
        let diag = |wrt_next: bool| {
            scan(&ordered, |p, acc, _| {
                let mut r = p.r.clone();
                for i in 0..n - 1 {
                    let saved = r[i + 1];
                    r[i + 1] = r[i];
                    let diff = |x: &[f64]| {
                        spec.g_unchecked(i + 1, p.t, p.z, p.l, x) - spec.g_unchecked(i, p.t, p.z, p.l, x)
                    };
                    let j = if wrt_next { i + 1 } else { i };
                    let ctx = PointCtx { r: &r, ..p.ctx() };
                    match partial(&diff, &r, j, false) {
                        Some(d) => {
                            let d = if wrt_next { -d } else { d };
                            for &u in &us {
                                acc.record(&ctx, i, Some(u), d * u, 1.0);
                            }
                        }
                        None => acc.unstable += 1,
                    }
                    r[i + 1] = saved;
                }
            })
        };
        (
            diag(false).finish("diagonal_slope_own", unbounded_note(triplet, u_range)),
            diag(true).finish("diagonal_slope_next", unbounded_note(triplet, u_range)),
        )
    };

    let (clause, clauses) = if n < 2 {
        (ConditionResult::vacuous("m2_clause", "single rating"), Vec::new())
    } else {
        m2_clauses(spec, triplet, &ordered, support_lo, support_hi)
    };

    CertificationReport {
        conditions: vec![support, tangent, own, next, clause],
        u_range,
        u_samples: us.len(),
        r_points_per_axis: mr,
        m2_clauses: clauses,
    }
}

fn slope_note(s: f64) -> String {
    if s > 0.0 {
        format!("sup dg_i/dr_i at r_i = 0 is {s:.6e}; jumps must stay above {:.6e}", -1.0 / s)
    } else {
        "dg_i/dr_i at r_i = 0 is never positive: no lower bound on the jumps".into()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Shape {
    not_concave: bool,
    not_convex: bool,
    somewhere_below: bool,
    somewhere_above: bool,
    unstable: bool,
}

impl Shape {
    fn merge(self, o: Shape) -> Shape {
        Shape {
            not_concave: self.not_concave || o.not_concave,
            not_convex: self.not_convex || o.not_convex,
            somewhere_below: self.somewhere_below || o.somewhere_below,
            somewhere_above: self.somewhere_above || o.somewhere_above,
            unstable: self.unstable || o.unstable,
        }
    }
}

/// Step for the second differences probing concavity in `r_i`.
const SHAPE_STEP: f64 = 1e-3;

fn m2_clauses(
    spec: &VolatilitySpec,
    triplet: &LevyTriplet,
    ordered: &[Point],
    support_lo: f64,
    support_hi: f64,
) -> (ConditionResult, Vec<String>) {
    let n = spec.n();
    let shapes: Vec<Shape> = ordered
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut local = vec![Shape::default(); n - 1];
            for p in chunk {
                let mut r = p.r.clone();
                for i in 0..n - 1 {
                    let diff = |x: &[f64]| {
                        spec.g_unchecked(i + 1, p.t, p.z, p.l, x) - spec.g_unchecked(i, p.t, p.z, p.l, x)
                    };
                    let d0 = diff(&r);
                    let (below, above) = excess_both(d0);
                    local[i].somewhere_below |= below;
                    local[i].somewhere_above |= above;
                    // Stay inside the ordered region r_{i+1} ≤ r_i ≤ r_{i-1}.
                    let h = SHAPE_STEP * (1.0 + r[i].abs());
                    let upper = if i == 0 { f64::INFINITY } else { r[i - 1] };
                    let base = r[i];
                    let start = if base + 2.0 * h <= upper {
                        base
                    } else if base - 2.0 * h >= r[i + 1] {
                        base - 2.0 * h
                    } else {
                        continue;
                    };
                    let mut vals = [0.0; 3];
                    for (k, v) in vals.iter_mut().enumerate() {
                        r[i] = start + k as f64 * h;
                        *v = diff(&r);
                    }
                    r[i] = base;
                    let sd = vals[0] - 2.0 * vals[1] + vals[2];
                    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let tol = INEQUALITY_TOL * (1.0 + scale);
                    if !sd.is_finite() {
                        local[i].unstable = true;
                    } else {
                        local[i].not_concave |= sd > tol;
                        local[i].not_convex |= sd < -tol;
                    }
                }
            }
            local
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(vec![Shape::default(); n - 1], |acc, v| {
            acc.into_iter().zip(v).map(|(a, b)| a.merge(b)).collect()
        });

    let positive_support = triplet.nu.is_zero() || support_lo >= 0.0;
    let negative_support = triplet.nu.is_zero() || support_hi <= 0.0;
    let per_pair: Vec<Vec<&'static str>> = shapes
        .iter()
        .map(|s| {
            let concave = !s.not_concave;
            let convex = !s.not_convex;
            let mut c = Vec::new();
            if concave && positive_support {
                c.push("i");
            }
            if convex && negative_support {
                c.push("ii");
            }
            if concave && !s.somewhere_below {
                c.push("iii");
            }
            if convex && !s.somewhere_above {
                c.push("iv");
            }
            c
        })
        .collect();
    let common: Vec<String> = ["i", "ii", "iii", "iv"]
        .iter()
        .filter(|c| per_pair.iter().all(|p| p.contains(c)))
        .map(|c| c.to_string())
        .collect();
    let all_covered = per_pair.iter().all(|p| !p.is_empty());
    let unstable = shapes.iter().any(|s| s.unstable);
    let verdict = if all_covered {
        Verdict::Pass
    } else if unstable {
        Verdict::Indeterminate
    } else {
        Verdict::Fail
    };
    let note = per_pair
        .iter()
        .enumerate()
        .map(|(i, c)| format!("pair ({}, {}): [{}]", i + 1, i + 2, c.join(", ")))
        .collect::<Vec<_>>()
        .join("; ");
    (
        ConditionResult {
            condition: "m2_clause".into(),
            verdict,
            samples: ordered.len() * (n - 1),
            max_violation: f64::NEG_INFINITY,
            witness: None,
            unstable_points: shapes.iter().filter(|s| s.unstable).count(),
            note: Some(note),
        },
        common,
    )
}

/// `(value < -tol, value > tol)` for a difference `g_{i+1} - g_i`.
fn excess_both(d: f64) -> (bool, bool) {
    let tol = INEQUALITY_TOL * (1.0 + d.abs());
    (d < -tol, d > tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_axes() {
        let a = axis(0.0, 5.0, 9);
        let b = axis(0.0, 5.0, 17);
        assert!(a.iter().all(|x| b.contains(x)));
        assert_eq!(axis(1.0, 1.0, 9), vec![1.0]);
    }

    #[test]
    fn ordered_vectors_are_nonincreasing() {
        let v = ordered_r(&[0.0, 1.0, 2.0], 3);
        // C(3 + 3 - 1, 3) = 10
        assert_eq!(v.len(), 10);
        assert!(v.iter().all(|r| r.windows(2).all(|w| w[0] >= w[1])));
        assert_eq!(tensor_r(&[0.0, 1.0, 2.0], 3).len(), 27);
    }

    #[test]
    fn richardson_flags_kinks() {
        let smooth = |x: &[f64]| x[0].sin();
        assert!((partial(&smooth, &[0.3], 0, false).unwrap() - 0.3f64.cos()).abs() < 1e-9);
        assert!((partial(&smooth, &[0.0], 0, true).unwrap() - 1.0).abs() < 1e-9);
        let kink = |x: &[f64]| x[0].abs();
        assert!(partial(&kink, &[1e-6], 0, false).is_none());
    }

    #[test]
    fn tensor_is_coarsened_for_long_ladders() {
        let ladder = RatingLadder::uniform(8).unwrap();
        let boxes = SamplingBoxes::new(1.0, &ladder, 1);
        let (pts, mr) = sample_points(&boxes, 8, false);
        assert!(mr < 9);
        assert!(pts.len() <= MAX_TENSOR_POINTS + boxes.lhs_points);
    }
}
