//! Empirical Lipschitz, growth and boundedness constants of a volatility
//! family, estimated on the sampling boxes.

use serde::Serialize;

use super::certify::{axis, partial, sample_points, Point, SamplingBoxes};
use super::{VolatilityKind, VolatilitySpec};
use crate::Verdict;

/// One estimated constant with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEstimate {
    pub name: String,
    pub verdict: Verdict,
    /// Estimate at the finest resolution; `None` when it diverges.
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    /// `sup |g_i(r) - g_i(r̄)| / ‖r - r̄‖` (LC).
    pub c_lc: f64,
    /// `ḡ(z) = sup_{t,l,r,i} |g_i|` on the z grid.
    pub g_bar: Vec<(f64, f64)>,
    /// `K = ‖ḡ‖_{L²,γ}` over the z box.
    pub k: f64,
    /// `ĝ = sup_z ḡ(z)`.
    pub g_hat: f64,
    /// Product of the declared factor bounds, when all are declared.
    pub g_hat_declared: Option<f64>,
    /// `sup |g_i| / ‖r‖` (LGC), `None` if it blows up as `r → 0`.
    pub c_lgc: Option<f64>,
    /// `sup |g_i| / √‖r‖` (B3).
    pub c_b3: Option<f64>,
    /// `sup ‖∇_r g_i‖`.
    pub gradient_bound: f64,
    /// `sup |∂g_i/∂z|`.
    pub z_derivative_bound: f64,
    pub constants: Vec<ConstantEstimate>,
}

impl RegularityReport {
    pub fn get(&self, name: &str) -> Option<&ConstantEstimate> {
        self.constants.iter().find(|c| c.name == name)
    }

    /// `K / √γ`, the constant of the exponential-moment condition on ν.
    pub fn exp_moment_constant(&self, gamma: f64) -> f64 {
        self.k / gamma.sqrt()
    }
}

fn lipschitz(spec: &VolatilitySpec, boxes: &SamplingBoxes) -> f64 {
    let n = spec.n();
    let m = boxes.points_per_axis.max(2);
    let ts = axis(boxes.t.0, boxes.t.1, m.min(5));
    let zs = axis(boxes.z.0, boxes.z.1, m.min(5));
    let rv = axis(0.0, boxes.r_max, m);
    let (pts, _) = sample_points(boxes, n, false);
    let mut c: f64 = 0.0;
    // Axis-aligned neighbours on the r grid.
    for &t in &ts {
        for &z in &zs {
            for &l in &boxes.l {
                for p in pts.iter().filter(|p| p.t == t && p.z == z && p.l == l) {
                    for j in 0..n {
                        let k = rv.iter().position(|&v| v == p.r[j]);
                        let Some(k) = k else { continue };
                        if k + 1 >= rv.len() {
                            continue;
                        }
                        let mut q = p.r.clone();
                        q[j] = rv[k + 1];
                        let dist = q[j] - p.r[j];
                        for i in 0..n {
                            let a = spec.g_unchecked(i, t, z, l, &p.r);
                            let b = spec.g_unchecked(i, t, z, l, &q);
                            c = c.max((a - b).abs() / dist);
                        }
                    }
                }
            }
        }
    }
    // Consecutive Latin-hypercube points sharing (t, z, l) with their partner.
    let lhs: Vec<&Point> = pts.iter().rev().take(boxes.lhs_points).collect();
    for w in lhs.windows(2) {
        let (p, q) = (w[0], w[1]);
        let dist = p
            .r
            .iter()
            .zip(&q.r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist == 0.0 {
            continue;
        }
        for i in 0..n {
            let a = spec.g_unchecked(i, p.t, p.z, p.l, &p.r);
            let b = spec.g_unchecked(i, p.t, p.z, p.l, &q.r);
            c = c.max((a - b).abs() / dist);
        }
    }
    c
}

/// `sup |g_i(s r)| / ‖s r‖^power` for `s = 4^{-k}`, `k = 0..6`.
fn growth_ratios(spec: &VolatilitySpec, pts: &[Point], power: f64) -> Vec<f64> {
    let n = spec.n();
    let mut out = Vec::new();
    for k in 0..7 {
        let s = 0.25f64.powi(k);
        let mut c: f64 = 0.0;
        for p in pts {
            let norm = p.r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let r: Vec<f64> = p.r.iter().map(|v| v * s).collect();
            let denom = (norm * s).powf(power);
            for i in 0..n {
                c = c.max(spec.g_unchecked(i, p.t, p.z, p.l, &r).abs() / denom);
            }
        }
        out.push(c);
    }
    out
}

fn growth_estimate(name: &str, ratios: &[f64]) -> ConstantEstimate {
    let first = ratios[0];
    let last = *ratios.last().unwrap();
    let prev = ratios[ratios.len() - 2];
    let diverges = last > 4.0 * first.max(1e-300) && last > prev * 1.5;
    ConstantEstimate {
        name: name.into(),
        verdict: if diverges { Verdict::Fail } else { Verdict::Pass },
        value: if diverges { None } else { Some(ratios.iter().fold(0.0, |m: f64, v| m.max(*v))) },
        note: diverges.then(|| {
            format!("ratio grows from {first:.3e} to {last:.3e} as r shrinks by 4^6")
        }),
    }
}

/// Empirical constants of the regularity conditions on the boxes. `gamma`
/// is the weight of the `L²,γ` norm used for `K`.
pub fn estimate_regularity_constants(spec: &VolatilitySpec, boxes: &SamplingBoxes, gamma: f64) -> RegularityReport {
    let n = spec.n();
    let coarse = SamplingBoxes {
        points_per_axis: boxes.points_per_axis.clamp(2, 5),
        lhs_points: boxes.lhs_points.min(200),
        ..boxes.clone()
    };
    let (pts, _) = sample_points(&coarse, n, false);

    // LC at two nested resolutions.
    let c_lc_coarse = lipschitz(spec, &coarse);
    let c_lc = lipschitz(spec, &coarse.refined());
    let lc_diverges = c_lc > 2.0 * c_lc_coarse + 1e-12;

    // ḡ on a fine z grid.
    let zs = axis(boxes.z.0, boxes.z.1, 65);
    let mut g_bar = Vec::with_capacity(zs.len());
    for &z in &zs {
        let mut m: f64 = 0.0;
        for p in &pts {
            for i in 0..n {
                m = m.max(spec.g_unchecked(i, p.t, z, p.l, &p.r).abs());
            }
        }
        g_bar.push((z, m));
    }
    let w: Vec<f64> = g_bar.iter().map(|&(z, g)| g * g * (gamma * z).exp()).collect();
    let mut k2 = 0.0;
    for j in 1..w.len() {
        k2 += 0.5 * (w[j - 1] + w[j]) * (zs[j] - zs[j - 1]);
    }
    let k = k2.sqrt();
    let k_grows = w.len() > 2 && w[w.len() - 1] > w[w.len() / 2] && w[w.len() - 1] > 0.0;
    let g_hat = g_bar.iter().fold(0.0f64, |m, &(_, g)| m.max(g));
    let g_hat_declared = spec.declared_sup();

    let lgc = growth_estimate("LGC", &growth_ratios(spec, &pts, 1.0));
    let b3 = growth_estimate("B3", &growth_ratios(spec, &pts, 0.5));

    let mut gradient_bound: f64 = 0.0;
    let mut z_derivative_bound: f64 = 0.0;
    let mut unstable = 0usize;
    for p in &pts {
        for i in 0..n {
            let g = |x: &[f64]| spec.g_unchecked(i, p.t, p.z, p.l, x);
            let mut sq = 0.0;
            for j in 0..n {
                match partial(&g, &p.r, j, p.r[j] == 0.0) {
                    Some(d) => sq += d * d,
                    None => unstable += 1,
                }
            }
            gradient_bound = gradient_bound.max(sq.sqrt());
            let gz = |x: &[f64]| spec.g_unchecked(i, p.t, x[0], p.l, &p.r);
            match partial(&gz, &[p.z], 0, p.z == boxes.z.0) {
                Some(d) => z_derivative_bound = z_derivative_bound.max(d.abs()),
                None => unstable += 1,
            }
        }
    }

    let mut constants = vec![
        ConstantEstimate {
            name: "LC".into(),
            verdict: if lc_diverges { Verdict::Fail } else { Verdict::Pass },
            value: (!lc_diverges).then_some(c_lc),
            note: lc_diverges.then(|| {
                format!("difference quotients grow under refinement: {c_lc_coarse:.3e} -> {c_lc:.3e}")
            }),
        },
        ConstantEstimate {
            name: "B1".into(),
            verdict: if k_grows { Verdict::Fail } else { Verdict::Pass },
            value: Some(k),
            note: k_grows.then(|| "ḡ(z)² e^{γz} is not decaying: K grows with the z range".to_string()),
        },
        {
            let ok = g_hat_declared.is_none_or(|d| g_hat <= d * (1.0 + 1e-12) + 1e-15);
            ConstantEstimate {
                name: "B2".into(),
                verdict: if ok { Verdict::Pass } else { Verdict::Fail },
                value: Some(g_hat),
                note: g_hat_declared.map(|d| format!("declared product of bounds {d:.6e}")),
            }
        },
        lgc.clone(),
        b3.clone(),
        ConstantEstimate {
            name: "gradient".into(),
            verdict: if unstable > 0 { Verdict::Indeterminate } else { Verdict::Pass },
            value: Some(gradient_bound),
            note: (unstable > 0).then(|| format!("{unstable} unstable derivative estimates")),
        },
    ];
    constants.push(declared_bounds_check(spec, boxes));
    if let VolatilityKind::Custom { .. } = spec.kind() {
        constants.push(determinism_check(spec, &pts));
    }

    RegularityReport {
        c_lc,
        g_bar,
        k,
        g_hat,
        g_hat_declared,
        c_lgc: lgc.value,
        c_b3: b3.value,
        gradient_bound,
        z_derivative_bound,
        constants,
    }
}

/// Declared factor bounds against sampled values on their domains.
fn declared_bounds_check(spec: &VolatilitySpec, boxes: &SamplingBoxes) -> ConstantEstimate {
    let mut worst: Option<String> = None;
    let mut check = |label: &str, f: &super::Factor, lo: f64, hi: f64| {
        if let Some(b) = f.bound {
            for x in axis(lo, hi, 257) {
                let v = f.value(x).abs();
                if v > b * (1.0 + 1e-12) + 1e-15 && worst.is_none() {
                    worst = Some(format!("{label}({x}) = {v} exceeds declared bound {b}"));
                }
            }
        }
    };
    let l_lo = boxes.l.iter().copied().fold(f64::INFINITY, f64::min);
    let l_hi = boxes.l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (l_lo, l_hi) = if l_lo.is_finite() { (l_lo, l_hi) } else { (0.0, 1.0) };
    let mut h_prime: Option<(f64, f64)> = None;
    match spec.kind() {
        VolatilityKind::Multiplicative {
            f1,
            f2,
            f3,
            h_list,
            h,
            h_prime_bound,
        } => {
            check("f1", f1, boxes.t.0, boxes.t.1);
            check("f2", f2, boxes.z.0, boxes.z.1);
            check("f3", f3, l_lo, l_hi);
            for (j, hj) in h_list.iter().enumerate() {
                check(&format!("h_{}", j + 1), hj, 0.0, boxes.r_max);
            }
            check("h", h, 0.0, boxes.r_max);
            if let Some(b) = h_prime_bound {
                h_prime = Some((h.f.sup_abs_derivative(0.0, boxes.r_max), *b));
            }
        }
        VolatilityKind::Separable { f1, f2, f3, phi } => {
            check("f1", f1, boxes.t.0, boxes.t.1);
            check("f2", f2, boxes.z.0, boxes.z.1);
            check("f3", f3, l_lo, l_hi);
            for (j, p) in phi.iter().enumerate() {
                check(&format!("phi_{}", j + 1), p, 0.0, boxes.r_max);
            }
        }
        VolatilityKind::Custom { .. } => {}
    }
    if let Some((sampled, b)) = h_prime {
        if sampled > b * (1.0 + 1e-12) && worst.is_none() {
            worst = Some(format!("sup h' = {sampled} exceeds declared bound {b}"));
        }
    }
    ConstantEstimate {
        name: "declared_bounds".into(),
        verdict: if worst.is_some() { Verdict::Fail } else { Verdict::Pass },
        value: None,
        note: worst,
    }
}

fn determinism_check(spec: &VolatilitySpec, pts: &[Point]) -> ConstantEstimate {
    let n = spec.n();
    let mut bad = None;
    for p in pts.iter().step_by((pts.len() / 100).max(1)) {
        for i in 0..n {
            let a = spec.g_unchecked(i, p.t, p.z, p.l, &p.r);
            let b = spec.g_unchecked(i, p.t, p.z, p.l, &p.r);
            if a.to_bits() != b.to_bits() && bad.is_none() {
                bad = Some(format!("g_{} at t={}, z={}, l={}, r={:?}: {a} then {b}", i + 1, p.t, p.z, p.l, p.r));
            }
        }
    }
    ConstantEstimate {
        name: "deterministic".into(),
        verdict: if bad.is_some() { Verdict::Fail } else { Verdict::Pass },
        value: None,
        note: bad,
    }
}
