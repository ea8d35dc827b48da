//! Choosing the structural dimension (ladle) and the penalty level (K-fold
//! cross-validation).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::kernels::{estimate, kernel_only, KernelEstimates, KernelKind};
use crate::matrix::{sym_eig, sym_inv_sqrt, DirectionMatrix, SymmetricMatrix};
use crate::par;
use crate::solver::{extract_directions, AdmmConfig, AdmmState, FitContext, PenaltySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadleResult {
    pub d_hat: usize,
    /// Indexed by `k = 0..|S|-1`.
    pub f_values: Vec<f64>,
    pub h_values: Vec<f64>,
    /// Replicates that produced a fit.
    pub bootstrap_count: usize,
    pub pilot_lambda: f64,
    pub active_size: usize,
}

/// Bootstrap ladle estimate of the structural dimension with the pilot
/// penalty at `lambda_max / 5`.
pub fn ladle(
    sample: &Sample,
    penalty: &PenaltySpec,
    kind: KernelKind,
    boot: usize,
    seed: u64,
    admm: AdmmConfig,
) -> Result<LadleResult> {
    if boot == 0 {
        return Err(Error::Configuration("ladle needs at least one bootstrap replicate".into()));
    }
    let kernels = estimate(sample, kind)?;
    let lambda = penalty.lambda_max(&kernels.lambda_hat) / 5.0;
    let pilot = FitContext::new(&kernels, admm)?.fit(penalty, lambda)?;
    let s = pilot.active_set.len();
    if s == 0 {
        return Err(Error::DegenerateFit(format!(
            "pilot fit at lambda {lambda:.4e} selected no predictors; use a smaller pilot penalty"
        )));
    }
    let pilot_eig = sym_eig(&pilot.b_hat)?;
    let kmax = s - 1;

    let n = sample.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables: Vec<Vec<usize>> = (0..boot).map(|_| (0..n).map(|_| rng.random_range(0..n)).collect()).collect();

    let per_replicate: Vec<Result<Vec<f64>>> = par::map_slice(&tables, |idx| {
        let resampled = sample.subset(idx);
        let k = estimate(&resampled, kind)?;
        let fit = FitContext::new(&k, admm)?.fit(penalty, lambda)?;
        let eig = sym_eig(&fit.b_hat)?;
        Ok((1..=kmax)
            .map(|k| 1.0 - overlap_det(&pilot_eig.leading(k), &eig.leading(k)))
            .collect())
    });
    let mut f0 = vec![0.0; kmax + 1];
    let mut used = 0usize;
    for (b, r) in per_replicate.into_iter().enumerate() {
        match r {
            Ok(v) => {
                used += 1;
                for (k, x) in v.into_iter().enumerate() {
                    f0[k + 1] += x;
                }
            }
            Err(e) => log::warn!("bootstrap replicate {b} skipped: {e}"),
        }
    }
    if used == 0 {
        return Err(Error::AtReplicate {
            replicate: 0,
            source: Box::new(Error::DegenerateFit("every bootstrap replicate failed".into())),
        });
    }
    for v in f0.iter_mut() {
        *v /= used as f64;
    }
    let f_sum: f64 = f0.iter().sum();
    let f_values: Vec<f64> = f0.iter().map(|v| v / (1.0 + f_sum)).collect();
    // negative eigenvalues are clamped so that h stays non-negative
    let phi: Vec<f64> = pilot_eig.values.iter().take(s).map(|v| v.max(0.0)).collect();
    let phi_sum: f64 = phi.iter().sum();
    let h_values: Vec<f64> = (0..=kmax).map(|k| phi[k] / (1.0 + phi_sum)).collect();
    let d_hat = argmin_first(&f_values.iter().zip(&h_values).map(|(f, h)| f + h).collect::<Vec<_>>());
    Ok(LadleResult { d_hat, f_values, h_values, bootstrap_count: used, pilot_lambda: lambda, active_size: s })
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// `beta (beta^T Sigma beta)^{-1/2}`.
pub fn standardize_directions(beta: &DirectionMatrix, sigma_hat: &SymmetricMatrix) -> Result<DirectionMatrix> {
    let b = beta.columns();
    if b.nrows() != sigma_hat.dim() {
        return Err(Error::Shape(format!("{} direction rows for a {}x{1} covariance", b.nrows(), sigma_hat.dim())));
    }
    let gram = SymmetricMatrix::new(b.transpose() * sigma_hat.as_matrix() * b)?;
    let root = sym_inv_sqrt(&gram).map_err(|e| Error::DegenerateDirections(e.to_string()))?;
    DirectionMatrix::new(b * root.as_matrix())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Ascending.
    pub lambda_grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen_lambda: f64,
    pub chosen_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub n_lambda: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub min_ratio: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 10, n_lambda: 30, min_ratio: 0.05 }
    }
}

/// `n` log-spaced values from `lo` to `hi`, ascending.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| if k + 1 == n { hi } else { (a + (b - a) * k as f64 / (n - 1) as f64).exp() })
        .collect()
}

/// Held-out index sets: a seeded shuffle cut into contiguous blocks, the
/// first `n % folds` blocks one longer.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || n < folds {
        return Err(Error::Configuration(format!("cannot split {n} observations into {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut block = idx[start..start + len].to_vec();
        block.sort_unstable();
        out.push(block);
        start += len;
    }
    Ok(out)
}

/// Training kernels and the held-out kernel for one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: KernelEstimates,
    pub test_lambda: SymmetricMatrix,
}

pub fn prepare_folds(sample: &Sample, kind: KernelKind, folds: usize, seed: u64) -> Result<Vec<FoldData>> {
    let n = sample.n();
    let held_out = fold_assignment(n, folds, seed)?;
    let built: Vec<Result<FoldData>> = par::map_slice(&held_out, |test| {
        let mut in_test = vec![false; n];
        for &i in test {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let wrap = |e: Error| match e {
            Error::InsufficientData(_) | Error::InvalidSlicing(_) => {
                Error::Configuration(format!("fold of size {} is too small: {e}", test.len()))
            }
            other => other,
        };
        let train = estimate(&sample.subset(&train), kind).map_err(wrap)?;
        let test_lambda = kernel_only(&sample.subset(test), kind).map_err(wrap)?;
        Ok(FoldData { train, test_lambda })
    });
    built.into_iter().collect()
}

/// Score of one fitted `B`: `-tr(beta^T Lambda_test beta)` with the `d`
/// leading directions standardized against the training covariance. `None`
/// when the fit has fewer than `d` nonzero eigenvalues.
fn cell_score(
    b_hat: &SymmetricMatrix,
    eigenvalues: &[f64],
    d: usize,
    sigma_train: &SymmetricMatrix,
    test_lambda: &SymmetricMatrix,
) -> Result<Option<f64>> {
    let scale = eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let nonzero = eigenvalues.iter().filter(|v| v.abs() > 1e-12 * scale).count();
    if scale == 0.0 || nonzero < d {
        return Ok(None);
    }
    let (beta, _) = extract_directions(b_hat, d)?;
    let beta = match standardize_directions(&beta, sigma_train) {
        Ok(b) => b,
        Err(Error::DegenerateDirections(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let b = beta.columns();
    Ok(Some(-(b.transpose() * test_lambda.as_matrix() * b).trace()))
}

/// Mean held-out score per grid value. Each fold walks the grid from the
/// largest value down, warm-starting every fit from the previous one.
pub fn cv_scores(
    folds: &[FoldData],
    penalty: &PenaltySpec,
    d: usize,
    grid: &[f64],
    admm: AdmmConfig,
) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::Configuration("d must be at least 1".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Configuration("lambda grid must be strictly increasing".into()));
    }
    let per_fold: Vec<Result<Vec<f64>>> = par::map_range(folds.len(), |f| {
        let fold = &folds[f];
        let ctx = FitContext::new(&fold.train, admm)?;
        let mut state = AdmmState::new(ctx.p(), penalty);
        let mut scores = vec![0.0; grid.len()];
        for (g, &lambda) in grid.iter().enumerate().rev() {
            let fit = ctx.fit_from(penalty, lambda, &mut state)?;
            scores[g] = match cell_score(&fit.b_hat, &fit.eigenvalues, d, &fold.train.sigma_hat, &fold.test_lambda)? {
                Some(s) => s,
                None => {
                    log::debug!("fold {f}, lambda {lambda:.4e}: fewer than {d} nonzero eigenvalues");
                    f64::INFINITY
                }
            };
        }
        Ok(scores)
    });
    let mut total = vec![0.0; grid.len()];
    for (f, r) in per_fold.into_iter().enumerate() {
        let s = r.map_err(|e| Error::AtReplicate { replicate: f, source: Box::new(e) })?;
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|t| t / folds.len() as f64).collect())
}

/// Index of the smallest score; ties go to the larger penalty.
pub fn choose_lambda(scores: &[f64]) -> usize {
    let mut best = scores.len() - 1;
    for i in (0..scores.len()).rev() {
        if scores[i] < scores[best] {
            best = i;
        }
    }
    best
}

/// K-fold cross-validation over `cfg.n_lambda` log-spaced values in
/// `[min_ratio * lambda_max, lambda_max]`, `lambda_max` taken from the full data.
pub fn cross_validate(
    sample: &Sample,
    penalty: &PenaltySpec,
    d: usize,
    kind: KernelKind,
    cfg: CvConfig,
    seed: u64,
    admm: AdmmConfig,
) -> Result<CvResult> {
    if d == 0 || d > sample.p() {
        return Err(Error::Configuration(format!("d must lie in 1..={}, got {d}", sample.p())));
    }
    let full = kernel_only(sample, kind)?;
    let lmax = penalty.lambda_max(&full);
    if !(lmax > 0.0) {
        return Err(Error::DegenerateFit("the kernel matrix is zero; nothing to tune".into()));
    }
    let grid = log_grid(cfg.min_ratio * lmax, lmax, cfg.n_lambda);
    let folds = prepare_folds(sample, kind, cfg.folds, seed)?;
    let scores = cv_scores(&folds, penalty, d, &grid, admm)?;
    if scores.iter().all(|s| s.is_infinite()) {
        log::warn!("every cross-validation cell had fewer than {d} nonzero eigenvalues");
    }
    let chosen_index = choose_lambda(&scores);
    Ok(CvResult { chosen_lambda: grid[chosen_index], chosen_index, lambda_grid: grid, scores })
}

/// `|det(A^T B)|` between two bases, used by the ladle.
pub fn overlap_det(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a.transpose() * b).determinant().abs()
}
