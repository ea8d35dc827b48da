//! Predictor neighborhoods, graphical-lasso precision estimation and the
//! per-group penalty weights.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;

/// `neighbors[i]` is sorted, contains `i`, and `j` in `neighbors[i]` iff `i` in
/// `neighbors[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodGraph {
    p: usize,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauScheme {
    SqrtSize,
    Unit,
}

impl FromStr for TauScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt-size" => Ok(TauScheme::SqrtSize),
            "unit" => Ok(TauScheme::Unit),
            other => Err(Error::Configuration(format!(
                "unknown weight scheme '{other}' (expected sqrt-size or unit)"
            ))),
        }
    }
}

impl NeighborhoodGraph {
    /// Validating constructor; rejects lists that break self-membership or symmetry.
    pub fn new(neighbors: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        let p = neighbors.len();
        if p == 0 {
            return Err(Error::InvalidInput("graph has no vertices".into()));
        }
        if weights.len() != p {
            return Err(Error::Shape(format!("{p} neighborhoods but {} weights", weights.len())));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidInput(format!("weight {i} is not positive")));
        }
        let mut sorted = Vec::with_capacity(p);
        for (i, list) in neighbors.into_iter().enumerate() {
            let mut list = list;
            list.sort_unstable();
            list.dedup();
            if let Some(&j) = list.iter().find(|&&j| j >= p) {
                return Err(Error::InvalidInput(format!("neighbor {j} of {i} is out of range")));
            }
            if list.binary_search(&i).is_err() {
                return Err(Error::InvalidInput(format!("predictor {i} is missing from its own neighborhood")));
            }
            sorted.push(list);
        }
        for (i, list) in sorted.iter().enumerate() {
            for &j in list {
                if sorted[j].binary_search(&i).is_err() {
                    return Err(Error::InvalidInput(format!(
                        "{j} is a neighbor of {i} but not the other way round"
                    )));
                }
            }
        }
        Ok(Self { p, neighbors: sorted, weights })
    }

    /// Every predictor on its own, unit weights.
    pub fn singletons(p: usize) -> Self {
        Self { p, neighbors: (0..p).map(|i| vec![i]).collect(), weights: vec![1.0; p] }
    }

    /// Build from (possibly one-sided) adjacency lists. Self loops are added,
    /// missing reverse edges are added with a warning, weights are `sqrt(|N_i|)`.
    pub fn from_adjacency(p: usize, lists: &[Vec<usize>]) -> Result<Self> {
        if lists.len() != p {
            return Err(Error::Shape(format!("expected {p} adjacency lists, got {}", lists.len())));
        }
        let mut sets: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                if j >= p {
                    return Err(Error::InvalidInput(format!("neighbor {j} of {i} is out of range")));
                }
                sets[i].push(j);
            }
        }
        let mut added = 0;
        for i in 0..p {
            let own = sets[i].clone();
            for j in own {
                if !sets[j].contains(&i) {
                    sets[j].push(i);
                    added += 1;
                }
            }
        }
        if added > 0 {
            log::warn!("adjacency lists were not symmetric; added {added} reverse edges");
        }
        let graph = Self::new(sets, vec![1.0; p])?;
        Ok(graph.with_tau(TauScheme::SqrtSize))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn all_neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_singleton(&self, i: usize) -> bool {
        self.neighbors[i].len() == 1
    }

    /// Position of `r` inside `neighbors[i]`, if present.
    pub fn position(&self, i: usize, r: usize) -> Option<usize> {
        self.neighbors[i].binary_search(&r).ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(|n| n.len() - 1).sum::<usize>() / 2
    }

    pub fn with_tau(mut self, scheme: TauScheme) -> Self {
        self.weights = match scheme {
            TauScheme::SqrtSize => self.neighbors.iter().map(|n| (n.len() as f64).sqrt()).collect(),
            TauScheme::Unit => vec![1.0; self.p],
        };
        self
    }
}

/// Set the weights by the named scheme ("sqrt-size" or "unit").
pub fn tau_weights(graph: NeighborhoodGraph, scheme: &str) -> Result<NeighborhoodGraph> {
    Ok(graph.with_tau(scheme.parse()?))
}

/// `N_i = {k : |omega_ki| > threshold} + {i}` with `sqrt(|N_i|)` weights.
pub fn neighborhoods_from_precision(omega: &SymmetricMatrix, threshold: f64) -> NeighborhoodGraph {
    let p = omega.dim();
    let neighbors = (0..p)
        .map(|i| (0..p).filter(|&k| k == i || omega.get(k, i).abs() > threshold).collect())
        .collect();
    NeighborhoodGraph { p, neighbors, weights: vec![1.0; p] }.with_tau(TauScheme::SqrtSize)
}

#[derive(Debug, Clone)]
pub struct GlassoFit {
    pub precision: SymmetricMatrix,
    /// Estimated covariance, the inverse of `precision`.
    pub covariance: SymmetricMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// `-log det W` after each sweep; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// `0.1 * max_{i != j} |s_ij|`.
pub fn default_glasso_penalty(sigma_hat: &SymmetricMatrix) -> f64 {
    let s = sigma_hat.as_matrix();
    let p = s.nrows();
    let mut mx = 0.0_f64;
    for j in 0..p {
        for i in 0..p {
            if i != j {
                mx = mx.max(s[(i, j)].abs());
            }
        }
    }
    0.1 * mx
}

/// Graphical lasso by block coordinate descent over the columns of the
/// covariance estimate `W`, each column solved as a lasso by coordinate descent.
/// The diagonal is penalized, so `W_ii = s_ii + penalty`.
pub fn glasso(sigma_hat: &SymmetricMatrix, penalty: f64, tol: f64, max_iter: usize) -> Result<GlassoFit> {
    if !(penalty >= 0.0 && penalty.is_finite()) {
        return Err(Error::InvalidInput(format!("glasso penalty must be non-negative, got {penalty}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("glasso tolerance must be positive, got {tol}")));
    }
    let s = sigma_hat.as_matrix();
    let p = s.nrows();
    if let Some(i) = (0..p).find(|&i| !(s[(i, i)] > 0.0)) {
        return Err(Error::InvalidInput(format!("covariance diagonal entry {i} is not positive")));
    }
    let mut w = s.clone();
    for i in 0..p {
        w[(i, i)] += penalty;
    }
    // beta[j] holds the lasso coefficients for column j, indexed over all p with beta[j][j] unused
    let mut beta = vec![DVector::<f64>::zeros(p); p];
    let inner_tol = tol * 1e-2;
    let inner_max = 10_000;
    let mut trace = Vec::new();
    let mut converged = p == 1;
    let mut iterations = 0;

    if p > 1 {
        for sweep in 0..max_iter {
            iterations = sweep + 1;
            let mut max_change = 0.0_f64;
            for j in 0..p {
                let b = &mut beta[j];
                lasso_cd(&w, s, j, penalty, b, inner_tol, inner_max);
                for i in 0..p {
                    if i == j {
                        continue;
                    }
                    let mut v = 0.0;
                    for k in 0..p {
                        if k != j && b[k] != 0.0 {
                            v += w[(i, k)] * b[k];
                        }
                    }
                    max_change = max_change.max((w[(i, j)] - v).abs());
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
            trace.push(neg_log_det(&w)?);
            if max_change < tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("glasso stopped after {iterations} sweeps without converging");
    }

    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let b = &beta[j];
        let mut wb = 0.0;
        for k in 0..p {
            if k != j {
                wb += w[(j, k)] * b[k];
            }
        }
        let t = 1.0 / (w[(j, j)] - wb);
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::NumericalFailure {
                iteration: iterations,
                message: format!("glasso produced a non-positive precision diagonal at {j}"),
            });
        }
        theta[(j, j)] = t;
        for k in 0..p {
            if k != j {
                theta[(k, j)] = -b[k] * t;
            }
        }
    }
    // the column-wise recovery is symmetric only up to solver tolerance
    let precision = SymmetricMatrix::new(theta)?;
    let covariance = SymmetricMatrix::new(w)?;
    Ok(GlassoFit { precision, covariance, iterations, converged, objective_trace: trace })
}

/// Coordinate descent for `min_b 1/2 b'W11 b - s12'b + penalty |b|_1` with
/// column/row `j` excluded.
fn lasso_cd(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    j: usize,
    penalty: f64,
    b: &mut DVector<f64>,
    tol: f64,
    max_iter: usize,
) {
    let p = w.nrows();
    for _ in 0..max_iter {
        let mut delta = 0.0_f64;
        for k in 0..p {
            if k == j {
                continue;
            }
            let mut r = s[(k, j)];
            for l in 0..p {
                if l != j && l != k && b[l] != 0.0 {
                    r -= w[(k, l)] * b[l];
                }
            }
            let new = soft(r, penalty) / w[(k, k)];
            delta = delta.max((new - b[k]).abs());
            b[k] = new;
        }
        if delta < tol {
            break;
        }
    }
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

fn neg_log_det(w: &DMatrix<f64>) -> Result<f64> {
    let chol = w.clone().cholesky().ok_or_else(|| {
        Error::Decomposition("glasso covariance iterate lost positive definiteness".into())
    })?;
    Ok(-2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::sample_covariance;
    use crate::matrix::{cholesky_sample, max_abs_diff};
    use proptest::prelude::*;

    fn block_precision() -> SymmetricMatrix {
        // inverse of I5 x (0.16 I5 + J5) on 25 coordinates, identity on 5 more
        let mut block = DMatrix::from_element(5, 5, 1.0);
        for i in 0..5 {
            block[(i, i)] += 0.16;
        }
        let inv = block.try_inverse().unwrap();
        let mut om = DMatrix::identity(30, 30);
        for b in 0..5 {
            om.view_mut((5 * b, 5 * b), (5, 5)).copy_from(&inv);
        }
        SymmetricMatrix::new(om).unwrap()
    }

    fn penalized_objective(theta: &DMatrix<f64>, s: &DMatrix<f64>, penalty: f64) -> f64 {
        let ld = theta.clone().cholesky().unwrap().l().diagonal().map(|d| d.ln()).sum() * 2.0;
        -ld + (s * theta).trace() + penalty * theta.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Proximal gradient with backtracking that keeps the iterate positive definite.
    fn glasso_oracle(s: &DMatrix<f64>, penalty: f64) -> DMatrix<f64> {
        let p = s.nrows();
        let mut theta = DMatrix::from_diagonal(&s.diagonal().map(|v| 1.0 / (v + penalty)));
        let mut step = 1.0;
        for _ in 0..200_000 {
            let inv = theta.clone().try_inverse().unwrap();
            let grad = s - &inv;
            let f0 = penalized_objective(&theta, s, 0.0);
            loop {
                let cand = (&theta - &grad * step).map(|v| soft(v, step * penalty));
                let cand = (&cand + cand.transpose()) * 0.5;
                if let Some(ch) = cand.clone().cholesky() {
                    let ld = ch.l().diagonal().map(|d| d.ln()).sum() * 2.0;
                    let f1 = -ld + (s * &cand).trace();
                    let diff = &cand - &theta;
                    let quad = f0 + (grad.transpose() * &diff).trace() + diff.norm_squared() / (2.0 * step);
                    if f1 <= quad + 1e-15 {
                        let moved = diff.amax();
                        theta = cand;
                        if moved < 1e-13 {
                            return theta;
                        }
                        step *= 1.2;
                        break;
                    }
                }
                step *= 0.5;
            }
        }
        let _ = p;
        theta
    }

    #[test]
    fn diagonal_precision_gives_singletons() {
        let g = neighborhoods_from_precision(&SymmetricMatrix::identity(4), 1e-8);
        for i in 0..4 {
            assert_eq!(g.neighbors(i), &[i]);
            assert_eq!(g.weight(i), 1.0);
        }
    }

    #[test]
    fn block_precision_gives_cliques() {
        let g = neighborhoods_from_precision(&block_precision(), 1e-8);
        for i in 0..25 {
            let b = i / 5;
            assert_eq!(g.neighbors(i), &(5 * b..5 * b + 5).collect::<Vec<_>>()[..]);
            assert!((g.weight(i) - 2.2360679).abs() < 1e-7);
        }
        for i in 25..30 {
            assert_eq!(g.neighbors(i), &[i]);
        }
        assert_eq!(g.edge_count(), 50);

        let mut om = block_precision().into_inner();
        om[(4, 5)] = 0.1;
        om[(5, 4)] = 0.1;
        let g2 = neighborhoods_from_precision(&SymmetricMatrix::new(om).unwrap(), 1e-8);
        assert!(g2.neighbors(4).contains(&5) && g2.neighbors(5).contains(&4));
    }

    #[test]
    fn tau_schemes() {
        let g = neighborhoods_from_precision(&block_precision(), 1e-8);
        let unit = tau_weights(g.clone(), "unit").unwrap();
        assert!(unit.weights().iter().all(|&w| w == 1.0));
        let back = tau_weights(unit, "sqrt-size").unwrap();
        assert_eq!(back, g);
        assert!(matches!(tau_weights(g, "cube-root"), Err(Error::Configuration(_))));
    }

    #[test]
    fn adjacency_is_symmetrized() {
        let g = NeighborhoodGraph::from_adjacency(3, &[vec![1], vec![], vec![]]).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1]);
        assert_eq!(g.neighbors(1), &[0, 1]);
        assert_eq!(g.neighbors(2), &[2]);
        assert!(NeighborhoodGraph::new(vec![vec![0, 1], vec![1]], vec![1.0, 1.0]).is_err());
        assert!(NeighborhoodGraph::new(vec![vec![1], vec![1]], vec![1.0, 1.0]).is_err());
        assert!(NeighborhoodGraph::from_adjacency(2, &[vec![5], vec![]]).is_err());
    }

    #[test]
    fn glasso_diagonal_input() {
        let s = SymmetricMatrix::from_diagonal(&[2.0, 0.5, 1.0]).unwrap();
        let fit = glasso(&s, 0.3, 1e-8, 100).unwrap();
        assert!(fit.converged);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert!((fit.precision.get(i, i) - 1.0 / (s.get(i, i) + 0.3)).abs() < 1e-12);
                } else {
                    assert_eq!(fit.precision.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn glasso_full_shrinkage() {
        let x = cholesky_sample(&crate::matrix::SymmetricMatrix::identity(6), 40, 3).unwrap();
        let s = sample_covariance(&x).unwrap();
        let big = default_glasso_penalty(&s) * 10.0;
        let fit = glasso(&s, big, 1e-8, 100).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(fit.precision.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn glasso_matches_proximal_oracle() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.2, -0.3, 0.2, -0.3, 0.9]);
        let fit = glasso(&SymmetricMatrix::new(s.clone()).unwrap(), 0.1, 1e-10, 1000).unwrap();
        assert!(fit.converged);
        let oracle = glasso_oracle(&s, 0.1);
        assert!(fit.precision.max_abs_diff(&oracle) < 1e-4, "{} vs {oracle}", fit.precision.as_matrix());
    }

    #[test]
    fn glasso_without_penalty_inverts() {
        for seed in 0..5 {
            let x = cholesky_sample(&SymmetricMatrix::identity(8), 200, seed).unwrap();
            let s = sample_covariance(&x).unwrap();
            let fit = glasso(&s, 0.0, 1e-10, 2000).unwrap();
            let inv = s.as_matrix().clone().try_inverse().unwrap();
            assert!(max_abs_diff(fit.precision.as_matrix(), &inv) < 1e-6);
        }
    }

    #[test]
    fn glasso_objective_never_increases() {
        let sigma = {
            let mut m = DMatrix::from_element(10, 10, 0.3);
            for i in 0..10 {
                m[(i, i)] = 1.0;
            }
            SymmetricMatrix::new(m).unwrap()
        };
        let x = cholesky_sample(&sigma, 50, 9).unwrap();
        let s = sample_covariance(&x).unwrap();
        let fit = glasso(&s, 0.05, 1e-9, 500).unwrap();
        assert!(fit.objective_trace.len() > 1);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} then {}", w[0], w[1]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn precision_graphs_are_valid(p in 1usize..12, seed in any::<u64>(), thr in 0.0f64..0.3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::<f64>::from_fn(p, p, |_, _| if rng.random_bool(0.3) { rng.random_range(-1.0..1.0) } else { 0.0 });
            let om = SymmetricMatrix::new(&m + m.transpose()).unwrap();
            let g = neighborhoods_from_precision(&om, thr);
            let rebuilt = NeighborhoodGraph::new(g.all_neighbors().to_vec(), g.weights().to_vec());
            prop_assert!(rebuilt.is_ok());
            for i in 0..p {
                prop_assert!((g.weight(i) - (g.neighbors(i).len() as f64).sqrt()).abs() < 1e-15);
            }
        }
    }
}
