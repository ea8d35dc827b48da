//! Metric-space responses, their distances, and pairwise distance matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::par;

/// One observed response. Serialized with a `"type"` tag, e.g.
/// `{"type": "sphere", "values": [0, 1, 0, 0]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseObject {
    Euclidean { values: Vec<f64> },
    Sphere { values: Vec<f64> },
    /// Quantile function sampled on a strictly increasing grid in (0, 1).
    Quantile { grid: Vec<f64>, values: Vec<f64> },
    Pmf { probabilities: Vec<f64> },
    /// Distribution with quantile function `mu + sigma * Phi^{-1}(t)`.
    #[serde(rename = "gaussian_loc")]
    GaussianLocation { mu: f64, sigma: f64 },
}

impl ResponseObject {
    pub fn kind(&self) -> &'static str {
        match self {
            ResponseObject::Euclidean { .. } => "euclidean",
            ResponseObject::Sphere { .. } => "sphere",
            ResponseObject::Quantile { .. } => "quantile",
            ResponseObject::Pmf { .. } => "pmf",
            ResponseObject::GaussianLocation { .. } => "gaussian_loc",
        }
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            ResponseObject::Euclidean { values } => {
                if values.is_empty() || !finite(values) {
                    return Err(Error::InvalidInput("euclidean response must be non-empty and finite".into()));
                }
            }
            ResponseObject::Sphere { values } => {
                let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !finite(values) || (norm - 1.0).abs() > tol.sphere_norm {
                    return Err(Error::InvalidInput(format!("sphere response has norm {norm}")));
                }
            }
            ResponseObject::Quantile { grid, values } => {
                if grid.len() != values.len() || grid.is_empty() {
                    return Err(Error::Shape(format!(
                        "quantile grid has {} points but {} values",
                        grid.len(),
                        values.len()
                    )));
                }
                if !finite(grid) || !finite(values) {
                    return Err(Error::InvalidInput("quantile response must be finite".into()));
                }
                if grid.iter().any(|&t| t <= 0.0 || t >= 1.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidInput(
                        "quantile grid must be strictly increasing inside (0, 1)".into(),
                    ));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidInput("quantile values must be non-decreasing".into()));
                }
            }
            ResponseObject::Pmf { probabilities } => {
                let sum: f64 = probabilities.iter().sum();
                if probabilities.iter().any(|&q| !(q >= 0.0) || !q.is_finite())
                    || (sum - 1.0).abs() > tol.pmf_sum
                {
                    return Err(Error::InvalidInput(format!(
                        "pmf must be non-negative and sum to 1 (sum {sum})"
                    )));
                }
            }
            ResponseObject::GaussianLocation { mu, sigma } => {
                if !mu.is_finite() || !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "gaussian location needs finite mu and sigma > 0 (got {mu}, {sigma})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sample a location-scale Gaussian's quantile function on `grid`.
    pub fn gaussian_quantiles(mu: f64, sigma: f64, grid: &[f64]) -> Result<Self> {
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        let values = grid.iter().map(|&t| mu + sigma * std.inverse_cdf(t)).collect();
        let q = ResponseObject::Quantile { grid: grid.to_vec(), values };
        q.validate(&Tolerances::default())?;
        Ok(q)
    }
}

/// `m` equispaced interior probabilities `(k + 1/2) / m`.
pub fn quantile_grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect()
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what} lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn distance(a: &ResponseObject, b: &ResponseObject) -> Result<f64> {
    use ResponseObject::*;
    match (a, b) {
        (Euclidean { values: x }, Euclidean { values: y }) => {
            same_len(x, y, "euclidean")?;
            Ok(x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        }
        (Sphere { values: x }, Sphere { values: y }) => {
            same_len(x, y, "sphere")?;
            let dot: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
            Ok(dot.clamp(-1.0, 1.0).acos())
        }
        (Quantile { grid: ga, values: qa }, Quantile { grid: gb, values: qb }) => {
            same_len(ga, gb, "quantile grid")?;
            if ga != gb {
                return Err(Error::Shape("quantile responses use different grids".into()));
            }
            Ok(wasserstein_trapezoid(ga, qa, qb))
        }
        (Pmf { probabilities: p }, Pmf { probabilities: q }) => {
            same_len(p, q, "pmf")?;
            let s: f64 = p.iter().zip(q).map(|(u, v)| (u.sqrt() - v.sqrt()).powi(2)).sum();
            Ok((s / 2.0).sqrt())
        }
        (GaussianLocation { mu: m1, sigma: s1 }, GaussianLocation { mu: m2, sigma: s2 }) => {
            if s1 == s2 {
                Ok((m1 - m2).abs())
            } else {
                Ok((m1 - m2).hypot(s1 - s2))
            }
        }
        _ => Err(Error::IncompatibleResponse(format!("{} vs {}", a.kind(), b.kind()))),
    }
}

/// Trapezoid rule for `(int_0^1 (qa - qb)^2 dt)^{1/2}` on the given grid, with
/// the integrand held constant from 0 to the first node and from the last node to 1.
fn wasserstein_trapezoid(grid: &[f64], qa: &[f64], qb: &[f64]) -> f64 {
    let sq: Vec<f64> = qa.iter().zip(qb).map(|(a, b)| (a - b) * (a - b)).collect();
    let m = grid.len();
    let mut total = grid[0] * sq[0] + (1.0 - grid[m - 1]) * sq[m - 1];
    for k in 0..m - 1 {
        total += 0.5 * (grid[k + 1] - grid[k]) * (sq[k] + sq[k + 1]);
    }
    total.max(0.0).sqrt()
}

/// `m / (1 + m)`.
pub fn bounded_transform(m: f64) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::InvalidInput(format!("distance must be non-negative, got {m}")));
    }
    Ok(m / (1.0 + m))
}

/// Symmetric `n x n` matrix of non-negative distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Shape(format!("distance matrix is {}x{}", n, m.ncols())));
        }
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!("distance diagonal ({i}, {i}) is not zero")));
            }
            for j in 0..i {
                let v = m[(i, j)];
                if !(v >= 0.0) || !v.is_finite() || v != m[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "distance entry ({i}, {j}) must be finite, non-negative and symmetric"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// `|y_i - y_j|` for scalar responses.
    pub fn from_scalar(y: &[f64]) -> Self {
        let n = y.len();
        Self(DMatrix::from_fn(n, n, |i, j| (y[i] - y[j]).abs()))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Distances among the observations `idx` (repeats allowed; a repeated
    /// observation is at distance zero from itself).
    pub fn reindex(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        Self(DMatrix::from_fn(k, k, |a, b| self.0[(idx[a], idx[b])]))
    }

    pub fn bounded(&self) -> Self {
        Self(self.0.map(|m| m / (1.0 + m)))
    }
}

pub fn pairwise_distances(responses: &[ResponseObject], apply_bound: bool) -> Result<DistanceMatrix> {
    let n = responses.len();
    let rows: Vec<Result<Vec<f64>>> = par::map_range(n, |i| {
        ((i + 1)..n)
            .map(|j| {
                let d = distance(&responses[i], &responses[j])
                    .map_err(|e| Error::AtPair { i, j, source: Box::new(e) })?;
                if apply_bound {
                    bounded_transform(d)
                } else {
                    Ok(d)
                }
            })
            .collect()
    });
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, d) in row?.into_iter().enumerate() {
            let j = i + 1 + off;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(DistanceMatrix(m))
}
