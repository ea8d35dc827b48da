//! Simulation designs: block covariances, the four data-generating examples,
//! and the accuracy measures used to score a fit.

mod harness;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ResponseSet, Sample};
use crate::error::{Error, Result};
use crate::matrix::{cholesky_sample_with, orthonormal_columns, DirectionMatrix, SymmetricMatrix};
use crate::metrics::{pairwise_distances, quantile_grid, ResponseObject};

pub use harness::{
    replicate_seed, run_replicate, run_scenario, ExperimentReport, FieldSummary, GraphSource, HarnessOptions,
    Method, ReplicateRecord, ScenarioSpec,
};

/// Size of the structured leading block.
pub const BLOCK_DIM: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    Sigma1,
    Sigma2,
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma1" => Ok(CovarianceKind::Sigma1),
            "sigma2" => Ok(CovarianceKind::Sigma2),
            other => Err(Error::Configuration(format!("unknown covariance '{other}' (expected sigma1 or sigma2)"))),
        }
    }
}

fn check_p(p: usize) -> Result<()> {
    if p < BLOCK_DIM {
        return Err(Error::Configuration(format!("the block designs need p >= {BLOCK_DIM}, got {p}")));
    }
    Ok(())
}

/// `0.16 I_5 + J_5`.
fn unit_block() -> DMatrix<f64> {
    DMatrix::from_fn(5, 5, |i, j| if i == j { 1.16 } else { 1.0 })
}

/// Leading 25x25 precision block of the second design. Paper entries
/// (5,6) and (10,11) are 1-based; here they become (4,5) and (9,10).
fn omega2_block() -> DMatrix<f64> {
    let inv = unit_block().try_inverse().expect("0.16 I + J is invertible");
    let mut om = DMatrix::zeros(BLOCK_DIM, BLOCK_DIM);
    for b in 0..5 {
        om.view_mut((5 * b, 5 * b), (5, 5)).copy_from(&inv);
    }
    for (i, j) in [(4, 5), (9, 10)] {
        om[(i, j)] = 0.1;
        om[(j, i)] = 0.1;
    }
    om
}

fn embed(block: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(p, p);
    let k = block.nrows();
    m.view_mut((0, 0), (k, k)).copy_from(block);
    m
}

/// `I_5 (x) (0.16 I_5 + J_5)` on the first 25 coordinates, identity elsewhere.
pub fn make_sigma1(p: usize) -> Result<SymmetricMatrix> {
    check_p(p)?;
    let mut m = DMatrix::identity(p, p);
    let b = unit_block();
    for k in 0..5 {
        m.view_mut((5 * k, 5 * k), (5, 5)).copy_from(&b);
    }
    SymmetricMatrix::new(m)
}

/// Inverse of `make_sigma1`, formed blockwise.
pub fn make_omega1(p: usize) -> Result<SymmetricMatrix> {
    check_p(p)?;
    let inv = unit_block().try_inverse().expect("0.16 I + J is invertible");
    let mut m = DMatrix::identity(p, p);
    for k in 0..5 {
        m.view_mut((5 * k, 5 * k), (5, 5)).copy_from(&inv);
    }
    SymmetricMatrix::new(m)
}

/// The first design's precision with blocks 1-2 and 2-3 linked by 0.1.
pub fn make_omega2(p: usize) -> Result<SymmetricMatrix> {
    check_p(p)?;
    SymmetricMatrix::new(embed(&omega2_block(), p))
}

pub fn make_sigma2(p: usize) -> Result<SymmetricMatrix> {
    check_p(p)?;
    let inv = omega2_block()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("modified precision block is not positive definite".into()))?
        .inverse();
    SymmetricMatrix::new(embed(&inv, p))
}

pub fn make_sigma(kind: CovarianceKind, p: usize) -> Result<SymmetricMatrix> {
    match kind {
        CovarianceKind::Sigma1 => make_sigma1(p),
        CovarianceKind::Sigma2 => make_sigma2(p),
    }
}

pub fn make_omega(kind: CovarianceKind, p: usize) -> Result<SymmetricMatrix> {
    match kind {
        CovarianceKind::Sigma1 => make_omega1(p),
        CovarianceKind::Sigma2 => make_omega2(p),
    }
}

/// A generated data set with its ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sample: Sample,
    /// The response objects behind the distances (metric examples only).
    pub responses: Option<Vec<ResponseObject>>,
    pub beta: DirectionMatrix,
    /// 0-based true active predictors.
    pub support: Vec<usize>,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    /// Overrides the example's noise standard deviation.
    pub noise_sd: Option<f64>,
    /// Store example-1 responses as quantile functions on this many grid
    /// points instead of in closed form.
    pub quantile_grid: Option<usize>,
}

/// Sum of canonical vectors `e_{from}..e_{to-1}`, times `scale`.
fn indicator(p: usize, from: usize, to: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, 1, |i, _| if (from..to).contains(&i) { scale } else { 0.0 })
}

fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn draw_x<R: Rng + ?Sized>(n: usize, p: usize, cov: CovarianceKind, rng: &mut R) -> Result<DMatrix<f64>> {
    cholesky_sample_with(&make_sigma(cov, p)?, n, rng)
}

/// Single index, distributional response: `mu ~ N(beta^T x, 0.1^2)`, response
/// quantile `mu + Phi^{-1}(t)`, bounded 2-Wasserstein distance.
pub fn gen_example1<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    cov: CovarianceKind,
    opts: GenOptions,
    rng: &mut R,
) -> Result<Dataset> {
    let x = draw_x(n, p, cov, rng)?;
    let beta = indicator(p, 0, 10, 1.0);
    let sd = opts.noise_sd.unwrap_or(0.1);
    let eps = normals(n, rng);
    let index = &x * &beta;
    let grid = opts.quantile_grid.map(quantile_grid);
    let responses = (0..n)
        .map(|i| {
            let mu = index[(i, 0)] + sd * eps[i];
            match &grid {
                Some(g) => ResponseObject::gaussian_quantiles(mu, 1.0, g),
                None => Ok(ResponseObject::GaussianLocation { mu, sigma: 1.0 }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let d = pairwise_distances(&responses, true)?;
    Ok(Dataset {
        sample: Sample::new(x, ResponseSet::Metric(d))?,
        responses: Some(responses),
        beta: DirectionMatrix::new(beta)?,
        support: (0..10).collect(),
        d: 1,
    })
}

/// Point on the unit sphere in R^4 driven by two indices of `x + 1`.
pub fn sphere_point(a: f64, b: f64, eps: f64) -> [f64; 4] {
    let c = eps.cos();
    [c * a.sin() * b.sin(), c * a.sin() * b.cos(), c * a.cos(), eps.sin()]
}

/// Two indices, responses on the unit sphere with geodesic distance.
pub fn gen_example2<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    cov: CovarianceKind,
    opts: GenOptions,
    rng: &mut R,
) -> Result<Dataset> {
    let x = draw_x(n, p, cov, rng)?;
    let b1 = indicator(p, 0, 5, 0.2);
    let b2 = indicator(p, 5, 10, 0.2);
    let sd = opts.noise_sd.unwrap_or(0.1);
    let eps = normals(n, rng);
    let shifted = x.map(|v| v + 1.0);
    let (i1, i2) = (&shifted * &b1, &shifted * &b2);
    let responses: Vec<ResponseObject> = (0..n)
        .map(|i| ResponseObject::Sphere { values: sphere_point(i1[(i, 0)], i2[(i, 0)], sd * eps[i]).to_vec() })
        .collect();
    let d = pairwise_distances(&responses, false)?;
    let mut beta = DMatrix::zeros(p, 2);
    beta.set_column(0, &b1.column(0));
    beta.set_column(1, &b2.column(0));
    Ok(Dataset {
        sample: Sample::new(x, ResponseSet::Metric(d))?,
        responses: Some(responses),
        beta: DirectionMatrix::new(beta)?,
        support: (0..10).collect(),
        d: 2,
    })
}

/// `y = exp(beta^T x + 0.5 eps)`.
pub fn gen_example3<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    cov: CovarianceKind,
    opts: GenOptions,
    rng: &mut R,
) -> Result<Dataset> {
    let x = draw_x(n, p, cov, rng)?;
    let beta = indicator(p, 0, 10, 1.0);
    let sd = opts.noise_sd.unwrap_or(0.5);
    let eps = normals(n, rng);
    let index = &x * &beta;
    let y: Vec<f64> = (0..n).map(|i| (index[(i, 0)] + sd * eps[i]).exp()).collect();
    Ok(Dataset {
        sample: Sample::new(x, ResponseSet::Scalar(y))?,
        responses: None,
        beta: DirectionMatrix::new(beta)?,
        support: (0..10).collect(),
        d: 1,
    })
}

/// `y = exp(beta_1^T x) sign(beta_2^T x) + 0.2 eps`.
pub fn gen_example4<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    cov: CovarianceKind,
    opts: GenOptions,
    rng: &mut R,
) -> Result<Dataset> {
    let x = draw_x(n, p, cov, rng)?;
    let b1 = indicator(p, 0, 5, 1.0);
    let b2 = indicator(p, 5, 10, 1.0);
    let sd = opts.noise_sd.unwrap_or(0.2);
    let eps = normals(n, rng);
    let (i1, i2) = (&x * &b1, &x * &b2);
    let y: Vec<f64> = (0..n).map(|i| i1[(i, 0)].exp() * sign(i2[(i, 0)]) + sd * eps[i]).collect();
    let mut beta = DMatrix::zeros(p, 2);
    beta.set_column(0, &b1.column(0));
    beta.set_column(1, &b2.column(0));
    Ok(Dataset {
        sample: Sample::new(x, ResponseSet::Scalar(y))?,
        responses: None,
        beta: DirectionMatrix::new(beta)?,
        support: (0..10).collect(),
        d: 2,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn generate<R: Rng + ?Sized>(
    example: u8,
    n: usize,
    p: usize,
    cov: CovarianceKind,
    opts: GenOptions,
    rng: &mut R,
) -> Result<Dataset> {
    match example {
        1 => gen_example1(n, p, cov, opts, rng),
        2 => gen_example2(n, p, cov, opts, rng),
        3 => gen_example3(n, p, cov, opts, rng),
        4 => gen_example4(n, p, cov, opts, rng),
        other => Err(Error::Configuration(format!("unknown example {other}; expected 1 to 4"))),
    }
}

/// `||P_hat - P||_F` between the projections onto the two column spans.
pub fn general_loss(beta_hat: &DirectionMatrix, beta: &DirectionMatrix) -> Result<f64> {
    if beta_hat.p() != beta.p() || beta_hat.d() != beta.d() {
        return Err(Error::Shape(format!(
            "direction shapes differ: {}x{} vs {}x{}",
            beta_hat.p(),
            beta_hat.d(),
            beta.p(),
            beta.d()
        )));
    }
    let degenerate = |e: Error| match e {
        Error::DegenerateDirections(_) => e,
        other => Error::DegenerateDirections(other.to_string()),
    };
    let a = orthonormal_columns(beta_hat.columns()).map_err(degenerate)?;
    let b = orthonormal_columns(beta.columns()).map_err(degenerate)?;
    // ||AA' - BB'||^2 = 2d - 2||A'B||^2 avoids forming p x p matrices
    let cross = (a.transpose() * b).norm_squared();
    let d = beta.d() as f64;
    Ok((2.0 * d - 2.0 * cross).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub true_recovery: u8,
    pub false_positive: usize,
    pub false_negative: usize,
}

pub fn selection_metrics(s_hat: &[usize], s_true: &[usize], p: usize) -> Result<SelectionMetrics> {
    let mut est = vec![false; p];
    let mut truth = vec![false; p];
    for (set, flags) in [(s_hat, &mut est), (s_true, &mut truth)] {
        for &i in set {
            if i >= p {
                return Err(Error::InvalidInput(format!("index {i} is outside 0..{p}")));
            }
            flags[i] = true;
        }
    }
    let false_positive = (0..p).filter(|&i| est[i] && !truth[i]).count();
    let false_negative = (0..p).filter(|&i| truth[i] && !est[i]).count();
    Ok(SelectionMetrics {
        true_recovery: u8::from(false_positive == 0 && false_negative == 0),
        false_positive,
        false_negative,
    })
}
