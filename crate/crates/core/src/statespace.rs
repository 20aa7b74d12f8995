//! Forward curves `h(z, x_i)` on a uniform time-to-maturity grid, one column
//! per rating, with the exponentially weighted norms
//! `‖h‖²_{L²,γ} = ∫ |h(u)|² e^{γu} du` and `‖h‖²_{H¹,γ} = ∫ (|h|² + |h′|²) e^{γu} du`.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};

/// Strictly increasing ratings `0 ≤ x_1 < ... < x_n = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingLadder {
    xs: Vec<f64>,
}

impl RatingLadder {
    pub fn new(xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("rating ladder is empty".into()));
        }
        if xs[0] < 0.0 || !xs[0].is_finite() {
            return Err(Error::InvalidInput(format!("ratings must lie in [0, 1], got {}", xs[0])));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(format!(
                "ratings must be strictly increasing: {xs:?}"
            )));
        }
        if *xs.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput(format!(
                "the last rating must be exactly 1, got {}",
                xs.last().unwrap()
            )));
        }
        Ok(Self { xs })
    }

    /// `n` equally spaced ratings `1/n, 2/n, ..., 1`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("rating ladder is empty".into()));
        }
        let mut xs: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
        xs[n - 1] = 1.0;
        Self::new(xs)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn x(&self, i: usize) -> f64 {
        self.xs[i]
    }

    /// Index of `x` on the ladder (exact match up to 1e-12).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        self.xs.iter().position(|&v| (v - x).abs() <= 1e-12)
    }
}

/// Norms of the sup-embedding inequality `sup_z ‖φ(z)‖ ≤ (2/√γ) ‖φ‖_{H¹,γ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddingReport {
    /// Largest Euclidean norm of a grid row.
    pub sup_norm: f64,
    /// `(2/√γ)` times the H¹ norm of the surface extended past `z_max`.
    pub bound: f64,
    /// Discretization allowance `2 dz max|h′|`.
    pub allowance: f64,
    /// `bound + allowance - sup_norm`.
    pub margin: f64,
    pub pass: bool,
}

/// `r(z_k, x_i)` on `z_k = k dz`, `k = 0..n_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSurface {
    dz: f64,
    gamma: f64,
    ladder: RatingLadder,
    values: Array2<f64>,
}

impl ForwardSurface {
    pub fn new(dz: f64, gamma: f64, ladder: RatingLadder, values: Array2<f64>) -> Result<Self> {
        if !(dz > 0.0) || !dz.is_finite() {
            return Err(Error::InvalidInput(format!("dz must be positive, got {dz}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
        }
        if values.ncols() != ladder.len() {
            return Err(Error::InvalidInput(format!(
                "surface has {} columns for {} ratings",
                values.ncols(),
                ladder.len()
            )));
        }
        if values.nrows() < 2 {
            return Err(Error::InvalidInput("surface needs at least two grid points".into()));
        }
        Ok(Self {
            dz,
            gamma,
            ladder,
            values,
        })
    }

    /// Samples `f(z, i)` on the grid.
    pub fn from_fn<F: Fn(f64, usize) -> f64>(
        dz: f64,
        n_z: usize,
        gamma: f64,
        ladder: RatingLadder,
        f: F,
    ) -> Result<Self> {
        let n = ladder.len();
        let values = Array2::from_shape_fn((n_z, n), |(k, i)| f(k as f64 * dz, i));
        Self::new(dz, gamma, ladder, values)
    }

    pub fn zeros(dz: f64, n_z: usize, gamma: f64, ladder: RatingLadder) -> Result<Self> {
        Self::from_fn(dz, n_z, gamma, ladder, |_, _| 0.0)
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::InvalidInput(format!(
                "shape {:?} does not match surface shape {:?}",
                values.dim(),
                self.values.dim()
            )));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_z(&self) -> usize {
        self.values.nrows()
    }

    pub fn z_max(&self) -> f64 {
        self.dz * (self.n_z() - 1) as f64
    }

    pub fn z(&self, k: usize) -> f64 {
        k as f64 * self.dz
    }

    pub fn ladder(&self) -> &RatingLadder {
        &self.ladder
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[[k, i]]
    }

    pub fn column(&self, i: usize) -> Result<ArrayView1<'_, f64>> {
        self.check_rating(i)?;
        Ok(self.values.column(i))
    }

    /// `r(0, x_i)` for every rating.
    pub fn short_end(&self) -> Vec<f64> {
        self.values.row(0).to_vec()
    }

    fn check_rating(&self, i: usize) -> Result<()> {
        if i >= self.ladder.len() {
            return Err(Error::RatingIndex {
                index: i,
                len: self.ladder.len(),
            });
        }
        Ok(())
    }

    fn weighted_trapezoid<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        let n_z = self.n_z();
        let mut acc = 0.0;
        for k in 0..n_z {
            let w = if k == 0 || k == n_z - 1 { 0.5 } else { 1.0 };
            acc += w * f(k) * (self.gamma * self.z(k)).exp();
        }
        acc * self.dz
    }

    /// Trapezoidal `‖h_i‖_{L²,γ}` over `[0, z_max]`.
    pub fn norm_l2gamma(&self, i: usize) -> Result<f64> {
        let col = self.column(i)?;
        Ok(self.weighted_trapezoid(|k| col[k] * col[k]).sqrt())
    }

    /// `∂h_i/∂z` by central differences, one-sided at both ends.
    pub fn derivative(&self, i: usize) -> Result<Vec<f64>> {
        let col = self.column(i)?;
        Ok(diff(col, self.dz))
    }

    /// `‖h_i‖_{H¹,γ}` with the derivative from [`Self::derivative`].
    pub fn norm_h1gamma(&self, i: usize) -> Result<f64> {
        let col = self.column(i)?;
        let d = diff(col, self.dz);
        Ok(self
            .weighted_trapezoid(|k| col[k] * col[k] + d[k] * d[k])
            .sqrt())
    }

    /// `|h_i(z_max)|² e^{γ z_max} dz`, the weight of the last cell; large
    /// values mean the truncation at `z_max` cuts off real mass.
    pub fn tail_diagnostic(&self, i: usize) -> Result<f64> {
        let col = self.column(i)?;
        let last = col[self.n_z() - 1];
        Ok(last * last * (self.gamma * self.z_max()).exp() * self.dz)
    }

    /// True when every rating's tail diagnostic is at most `bound`.
    pub fn tail_within(&self, bound: f64) -> bool {
        (0..self.ladder.len()).all(|i| self.tail_diagnostic(i).map(|v| v <= bound).unwrap_or(false))
    }

    /// `h(z + steps dz)`; cells past `z_max` repeat the last value.
    pub fn shift(&self, steps: usize) -> Result<Self> {
        let n_z = self.n_z();
        if steps > n_z {
            return Err(Error::InvalidInput(format!(
                "cannot shift by {steps} cells on a grid of {n_z}"
            )));
        }
        let last = n_z - 1;
        let values = Array2::from_shape_fn(self.values.dim(), |(k, i)| {
            self.values[[(k + steps).min(last), i]]
        });
        self.with_values(values)
    }

    /// Checks the sup embedding of `H¹,γ` on the grid.
    ///
    /// The surface only lives on `[0, z_max]`, so its H¹ norm is taken for the
    /// minimal-energy extension `h(z_max) e^{-μ(z - z_max)}` past the grid,
    /// with `μ = (γ + √(γ² + 4))/2`, which adds
    /// `|h(z_max)|² e^{γ z_max} (1 + μ²)/√(γ² + 4)` to each squared norm.
    pub fn sup_embedding_check(&self) -> EmbeddingReport {
        let n = self.ladder.len();
        let sup_norm = self
            .values
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let g = self.gamma;
        let mu = 0.5 * (g + (g * g + 4.0).sqrt());
        let ext = (1.0 + mu * mu) / (g * g + 4.0).sqrt();
        let last = self.n_z() - 1;
        let mut h1_sq = 0.0;
        let mut max_deriv: f64 = 0.0;
        for i in 0..n {
            let col = self.values.column(i);
            let d = diff(col, self.dz);
            h1_sq += self.weighted_trapezoid(|k| col[k] * col[k] + d[k] * d[k]);
            h1_sq += col[last] * col[last] * (g * self.z_max()).exp() * ext;
            max_deriv = d.iter().fold(max_deriv, |m, v| m.max(v.abs()));
        }
        let bound = 2.0 / g.sqrt() * h1_sq.sqrt();
        let allowance = 2.0 * self.dz * max_deriv;
        let margin = bound + allowance - sup_norm;
        EmbeddingReport {
            sup_norm,
            bound,
            allowance,
            margin,
            pass: margin >= 0.0,
        }
    }

    /// Writes `z,x_1,...,x_n` with one row per grid point.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["z".to_string()];
        header.extend((1..=self.ladder.len()).map(|i| format!("x_{i}")));
        wtr.write_record(&header)?;
        for (k, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![format!("{}", self.z(k))];
            rec.extend(row.iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a curve table with a `z` column followed by one column per
    /// rating and interpolates it linearly onto the grid (flat beyond the
    /// last row).
    pub fn read_csv<R: Read>(
        r: R,
        dz: f64,
        n_z: usize,
        gamma: f64,
        ladder: RatingLadder,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let n = ladder.len();
        let width = rdr.headers()?.len();
        if width != n + 1 {
            return Err(Error::InvalidInput(format!(
                "curve table has {width} columns, expected z plus {n} ratings"
            )));
        }
        let mut zs = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            let parsed = parsed
                .map_err(|e| Error::InvalidInput(format!("bad number in curve table: {e}")))?;
            zs.push(parsed[0]);
            rows.push(parsed[1..].to_vec());
        }
        if zs.is_empty() {
            return Err(Error::InvalidInput("curve table has no rows".into()));
        }
        if zs.windows(2).any(|w| !(w[0] < w[1])) || zs[0] > 0.0 {
            return Err(Error::InvalidInput(
                "curve table z column must be increasing and start at or below 0".into(),
            ));
        }
        Self::from_fn(dz, n_z, gamma, ladder, |z, i| {
            let j = zs.partition_point(|&v| v <= z);
            if j == 0 {
                rows[0][i]
            } else if j == zs.len() {
                rows[j - 1][i]
            } else {
                let w = (z - zs[j - 1]) / (zs[j] - zs[j - 1]);
                rows[j - 1][i] + w * (rows[j][i] - rows[j - 1][i])
            }
        })
    }
}

fn diff(col: ArrayView1<'_, f64>, dz: f64) -> Vec<f64> {
    let n = col.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    d[0] = (col[1] - col[0]) / dz;
    d[n - 1] = (col[n - 1] - col[n - 2]) / dz;
    for k in 1..n - 1 {
        d[k] = (col[k + 1] - col[k - 1]) / (2.0 * dz);
    }
    d
}
