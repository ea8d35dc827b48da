//! Sample covariance and the SDR kernel matrices fed to the solver.

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::data::{ResponseSet, Sample};
use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;
use crate::metrics::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// Weighted inverse regression ensemble on pairwise response distances.
    Wire,
    /// Sliced inverse regression on a scalar response.
    Sir { slices: usize },
    /// Cumulative mean estimation on a scalar response.
    Cume,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Wire => "wire",
            KernelKind::Sir { .. } => "sir",
            KernelKind::Cume => "cume",
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelEstimates {
    pub sigma_hat: SymmetricMatrix,
    pub lambda_hat: SymmetricMatrix,
    pub n: usize,
    pub kind: KernelKind,
}

impl KernelEstimates {
    pub fn p(&self) -> usize {
        self.sigma_hat.dim()
    }
}

/// Covariance estimate and kernel for `sample`.
pub fn estimate(sample: &Sample, kind: KernelKind) -> Result<KernelEstimates> {
    let sigma_hat = sample_covariance(&sample.x)?;
    let lambda_hat = kernel_only(sample, kind)?;
    Ok(KernelEstimates { sigma_hat, lambda_hat, n: sample.n(), kind })
}

/// Just the kernel matrix (used for held-out folds).
pub fn kernel_only(sample: &Sample, kind: KernelKind) -> Result<SymmetricMatrix> {
    match (kind, &sample.response) {
        (KernelKind::Wire, ResponseSet::Metric(d)) => wire_kernel(&sample.x, d),
        (KernelKind::Wire, ResponseSet::Scalar(y)) => wire_kernel(&sample.x, &DistanceMatrix::from_scalar(y)),
        (KernelKind::Sir { slices }, ResponseSet::Scalar(y)) => sir_kernel(&sample.x, y, slices),
        (KernelKind::Cume, ResponseSet::Scalar(y)) => cume_kernel(&sample.x, y),
        (k, ResponseSet::Metric(_)) => Err(Error::Configuration(format!(
            "the {} kernel needs a scalar response",
            k.name()
        ))),
    }
}

pub fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mean: RowDVector<f64> = x.row_sum() / n;
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &mean;
    }
    xc
}

/// `n^{-1} sum_i (x_i - xbar)(x_i - xbar)^T`.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("covariance needs n >= 2, got {n}")));
    }
    if x.ncols() == 0 {
        return Err(Error::Shape("predictor matrix has no columns".into()));
    }
    let xc = centered(x);
    SymmetricMatrix::new(xc.transpose() * &xc / n as f64)
}

/// `-{n(n-1)}^{-1} sum_{i != j} (x_i - xbar)(x_j - xbar)^T m(y_i, y_j)`, evaluated as
/// `-X_c^T D X_c / {n(n-1)}` (the zero diagonal of `D` drops the `i = j` terms).
pub fn wire_kernel(x: &DMatrix<f64>, d: &DistanceMatrix) -> Result<SymmetricMatrix> {
    let n = x.nrows();
    if d.len() != n {
        return Err(Error::Shape(format!("{n} predictor rows but a {}x{0} distance matrix", d.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("kernel needs n >= 2, got {n}")));
    }
    let xc = centered(x);
    let dx = d.as_matrix() * &xc;
    let k = xc.transpose() * dx * (-1.0 / (n as f64 * (n as f64 - 1.0)));
    SymmetricMatrix::new(k)
}

/// Indices of `y` in ascending order, ties kept in input order.
fn sorted_order(y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    order
}

/// Sliced inverse regression kernel with `slices` near-equal slices of the
/// sorted response; the first `n % slices` slices get one extra observation.
pub fn sir_kernel(x: &DMatrix<f64>, y: &[f64], slices: usize) -> Result<SymmetricMatrix> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} predictor rows but {} responses", y.len())));
    }
    if slices < 2 {
        return Err(Error::InvalidSlicing(format!("need at least 2 slices, got {slices}")));
    }
    if n < 2 * slices {
        return Err(Error::InvalidSlicing(format!(
            "{n} observations cannot fill {slices} slices with 2 each"
        )));
    }
    let xc = centered(x);
    let order = sorted_order(y);
    let (base, extra) = (n / slices, n % slices);
    let mut weighted_means = DMatrix::zeros(slices, p);
    let mut start = 0;
    for h in 0..slices {
        let size = base + usize::from(h < extra);
        let mut mean = RowDVector::zeros(p);
        for &i in &order[start..start + size] {
            mean += xc.row(i);
        }
        mean /= size as f64;
        // row scaled by sqrt(n_h / n) so that M^T M is the weighted sum of outer products
        weighted_means.set_row(h, &(mean * (size as f64 / n as f64).sqrt()));
        start += size;
    }
    SymmetricMatrix::new(weighted_means.transpose() * weighted_means)
}

/// Cumulative mean estimation kernel `n^{-1} sum_j m(y_j) m(y_j)^T` with
/// `m(t) = n^{-1} sum_i (x_i - xbar) 1(y_i <= t)`.
pub fn cume_kernel(x: &DMatrix<f64>, y: &[f64]) -> Result<SymmetricMatrix> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} predictor rows but {} responses", y.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("kernel needs n >= 2, got {n}")));
    }
    let xc = centered(x);
    let order = sorted_order(y);
    let nf = n as f64;
    let mut rows: Vec<RowDVector<f64>> = Vec::new();
    let mut cum = RowDVector::zeros(p);
    let mut k = 0;
    while k < n {
        let mut end = k;
        while end < n && y[order[end]] == y[order[k]] {
            cum += xc.row(order[end]);
            end += 1;
        }
        let ties = (end - k) as f64;
        rows.push(&cum * (ties.sqrt() / nf));
        k = end;
    }
    let m = DMatrix::from_rows(&rows);
    SymmetricMatrix::new(m.transpose() * m / nf)
}
