//! Dense symmetric linear algebra shared by every other module.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// A dense `p x p` matrix that is exactly symmetric.
///
/// Construction averages the input with its transpose, so `a[(i, j)] == a[(j, i)]`
/// holds bit for bit afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    pub fn new(mut m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("matrix dimension must be at least 1".into()));
        }
        ensure_finite(&m)?;
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Ok(Self(m))
    }

    pub fn zeros(p: usize) -> Self {
        assert!(p > 0, "dimension must be at least 1");
        Self(DMatrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        assert!(p > 0, "dimension must be at least 1");
        Self(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn max_abs_diff(&self, other: &DMatrix<f64>) -> f64 {
        max_abs_diff(&self.0, other)
    }
}

impl AsRef<DMatrix<f64>> for SymmetricMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `A = P diag(values) P^T` with `values` sorted non-increasing.
///
/// Each eigenvector is sign-fixed so that its entry of largest magnitude is
/// non-negative (ties go to the lowest index). Equal eigenvalues keep the
/// order produced by the underlying solver.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        &self.vectors * d * self.vectors.transpose()
    }

    /// The first `k` eigenvectors as a `p x k` matrix.
    pub fn leading(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

pub fn sym_eig(a: &SymmetricMatrix) -> Result<EigenDecomposition> {
    ensure_finite(a.as_matrix())?;
    let eig = a
        .as_matrix()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::Decomposition("symmetric eigensolver did not converge".into()))?;
    let p = a.dim();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    let mut values = Vec::with_capacity(p);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition { vectors, values })
}

/// Flip `v` so its largest-magnitude entry (lowest index on ties) is non-negative.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `M^{-1/2}` for symmetric positive definite `M`.
pub fn sym_inv_sqrt(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    sym_inv_sqrt_tol(m, Tolerances::default().singular)
}

pub fn sym_inv_sqrt_tol(m: &SymmetricMatrix, tol: f64) -> Result<SymmetricMatrix> {
    let eig = sym_eig(m)?;
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min <= tol {
        return Err(Error::Singular { min_eigenvalue: min, tolerance: tol });
    }
    let scale: Vec<f64> = eig.values.iter().map(|g| 1.0 / g.sqrt()).collect();
    let mut scaled = eig.vectors.clone();
    for (j, s) in scale.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    SymmetricMatrix::new(&scaled * eig.vectors.transpose())
}

/// Frobenius, max-abs and max-row-sum norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    pub frobenius: f64,
    pub max_abs: f64,
    pub row_sum_inf: f64,
}

pub fn norms(a: &DMatrix<f64>) -> Result<MatrixNorms> {
    ensure_finite(a)?;
    let frobenius = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let max_abs = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let row_sum_inf = a
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    Ok(MatrixNorms { frobenius, max_abs, row_sum_inf })
}

/// `n` draws from `N(0, sigma)` as the rows of an `n x p` matrix.
pub fn cholesky_sample(sigma: &SymmetricMatrix, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cholesky_sample_with(sigma, n, &mut rng)
}

pub fn cholesky_sample_with<R: rand::Rng + ?Sized>(
    sigma: &SymmetricMatrix,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = sigma.dim();
    let chol = sigma
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("covariance is not positive definite".into()))?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, p));
    }
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(rng);
        }
    }
    Ok(z * chol.l().transpose())
}

/// Orthonormal basis of the column span of a full-column-rank matrix,
/// computed as `B (B^T B)^{-1/2}`.
pub fn orthonormal_columns(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = SymmetricMatrix::new(b.transpose() * b)
        .map_err(|e| Error::DegenerateDirections(e.to_string()))?;
    let eig = sym_eig(&gram)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let bottom = eig.values.last().copied().unwrap_or(0.0);
    if !(top > 0.0) || bottom <= 1e-12 * top {
        return Err(Error::DegenerateDirections(format!(
            "column Gram matrix is rank deficient (eigenvalues {top:e} .. {bottom:e})"
        )));
    }
    let root = sym_inv_sqrt_tol(&gram, 0.0)?;
    Ok(b * root.as_matrix())
}

/// A `p x d` matrix of directions, `1 <= d <= p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMatrix(DMatrix<f64>);

impl DirectionMatrix {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        let (p, d) = columns.shape();
        if d == 0 || d > p {
            return Err(Error::Configuration(format!(
                "direction matrix needs 1 <= d <= p, got p={p}, d={d}"
            )));
        }
        ensure_finite(&columns)?;
        Ok(Self(columns))
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn ensure_finite(m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
        let (r, c) = (pos % m.nrows().max(1), pos / m.nrows().max(1));
        return Err(Error::InvalidInput(format!("non-finite entry at ({r}, {c})")));
    }
    Ok(())
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Rows of `x` listed in `idx`, in that order (repeats allowed).
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}
