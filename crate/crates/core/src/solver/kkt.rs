use nalgebra::DMatrix;

use super::prox::Decomposition;
use crate::error::{Error, Result};
use crate::graph::NeighborhoodGraph;
use crate::matrix::SymmetricMatrix;

fn active_rows(b: &DMatrix<f64>) -> Vec<usize> {
    (0..b.nrows()).filter(|&i| b.row(i).iter().any(|&v| v != 0.0)).collect()
}

/// Columns `active` of `R = Lambda - Sigma B Sigma`, using that `B` vanishes
/// outside `active x active`.
fn residual_columns(
    b_hat: &SymmetricMatrix,
    sigma: &SymmetricMatrix,
    lambda_hat: &SymmetricMatrix,
    active: &[usize],
) -> DMatrix<f64> {
    let p = b_hat.dim();
    let a = active.len();
    let s = sigma.as_matrix();
    let b = b_hat.as_matrix();
    let s_pa = DMatrix::from_fn(p, a, |i, k| s[(i, active[k])]);
    let b_aa = DMatrix::from_fn(a, a, |k, l| b[(active[k], active[l])]);
    let s_aa = DMatrix::from_fn(a, a, |k, l| s[(active[k], active[l])]);
    let l_pa = DMatrix::from_fn(p, a, |i, k| lambda_hat.get(i, active[k]));
    l_pa - s_pa * b_aa * s_aa
}

/// Largest violation of the optimality conditions over the groups, on
/// `N_i x S` where `S` is the support of `b_hat`: for a nonzero block,
/// `||R - lambda tau_i V^(i)/||V^(i)||_F||_F`; for a zero block,
/// `(||R||_F - lambda tau_i)_+`.
pub fn kkt_check(
    b_hat: &SymmetricMatrix,
    sigma: &SymmetricMatrix,
    lambda_hat: &SymmetricMatrix,
    graph: &NeighborhoodGraph,
    lambda: f64,
    decomposition: Option<&Decomposition>,
) -> Result<f64> {
    let dec = decomposition.ok_or(Error::RequiresSolverState)?;
    let p = b_hat.dim();
    if sigma.dim() != p || lambda_hat.dim() != p || graph.p() != p || dec.len() != p {
        return Err(Error::Shape("KKT inputs disagree on p".into()));
    }
    let active = active_rows(b_hat.as_matrix());
    if active.is_empty() {
        return Ok(0.0);
    }
    let r = residual_columns(b_hat, sigma, lambda_hat, &active);
    let mut worst = 0.0_f64;
    for i in 0..p {
        let ni = graph.neighbors(i);
        let lt = lambda * graph.weight(i);
        let vt = dec.block_t(i);
        let mut v_norm_sq = 0.0;
        for k in 0..ni.len() {
            for &c in &active {
                v_norm_sq += vt[(c, k)] * vt[(c, k)];
            }
        }
        let violation = if v_norm_sq > 0.0 {
            let scale = lt / v_norm_sq.sqrt();
            let mut ss = 0.0;
            for (k, &row) in ni.iter().enumerate() {
                for (a, &c) in active.iter().enumerate() {
                    let d = r[(row, a)] - scale * vt[(c, k)];
                    ss += d * d;
                }
            }
            ss.sqrt()
        } else {
            let ss: f64 = ni.iter().map(|&row| r.row(row).norm_squared()).sum();
            (ss.sqrt() - lt).max(0.0)
        };
        worst = worst.max(violation);
    }
    Ok(worst)
}

/// Elementwise analogue for the l1 penalty on `S x S`: `|R_ij - lambda sign(V_ij)|`
/// where `V_ij != 0`, else `(|R_ij| - lambda)_+`.
pub fn l1_kkt_residual(
    b_hat: &SymmetricMatrix,
    sigma: &SymmetricMatrix,
    lambda_hat: &SymmetricMatrix,
    v: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let active = active_rows(b_hat.as_matrix());
    if active.is_empty() {
        return 0.0;
    }
    let r = residual_columns(b_hat, sigma, lambda_hat, &active);
    let mut worst = 0.0_f64;
    for &i in &active {
        for (a, &j) in active.iter().enumerate() {
            let rij = r[(i, a)];
            let vij = v[(i, j)];
            let viol = if vij != 0.0 { (rij - lambda * vij.signum()).abs() } else { (rij.abs() - lambda).max(0.0) };
            worst = worst.max(viol);
        }
    }
    worst
}
