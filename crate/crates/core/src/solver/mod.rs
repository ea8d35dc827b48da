//! ADMM for the penalized quadratic objective `1/2 tr(B S B S) - tr(B L) + penalty`.

mod kkt;
mod prox;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::graph::NeighborhoodGraph;
use crate::kernels::KernelEstimates;
use crate::matrix::{sym_eig, DirectionMatrix, EigenDecomposition, SymmetricMatrix};

pub use kkt::{kkt_check, l1_kkt_residual};
pub use prox::{graphical_v_update, l1_v_update, rowgroup_v_update, Decomposition};

use prox::{graphical_sweep, soft_threshold, LazyRows};

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltySpec {
    Graphical(NeighborhoodGraph),
    ElementwiseL1,
    RowGroup,
}

impl PenaltySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PenaltySpec::Graphical(_) => "gwire",
            PenaltySpec::ElementwiseL1 => "swire1",
            PenaltySpec::RowGroup => "swire2",
        }
    }

    /// Smallest `lambda` with an all-zero solution.
    pub fn lambda_max(&self, lambda_hat: &SymmetricMatrix) -> f64 {
        let l = lambda_hat.as_matrix();
        match self {
            PenaltySpec::Graphical(g) => lambda_max(lambda_hat, g),
            PenaltySpec::ElementwiseL1 => l.amax(),
            PenaltySpec::RowGroup => l.row_iter().map(|r| r.norm()).fold(0.0, f64::max),
        }
    }
}

/// `max_i ||Lambda_{N_i}||_F / tau_i`, rows `N_i` and all columns.
pub fn lambda_max(lambda_hat: &SymmetricMatrix, graph: &NeighborhoodGraph) -> f64 {
    let l = lambda_hat.as_matrix();
    let row_sq: Vec<f64> = l.row_iter().map(|r| r.norm_squared()).collect();
    (0..graph.p())
        .map(|i| graph.neighbors(i).iter().map(|&r| row_sq[r]).sum::<f64>().sqrt() / graph.weight(i))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self::from_tolerances(&Tolerances::default())
    }
}

impl AdmmConfig {
    pub fn from_tolerances(t: &Tolerances) -> Self {
        Self { rho: t.rho, eps_primal: t.eps_primal, eps_dual: t.eps_dual, max_iter: t.max_iter }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps_primal = eps;
        self.eps_dual = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.rho) && ok(self.eps_primal) && ok(self.eps_dual) && self.max_iter > 0) {
            return Err(Error::Configuration(format!("ADMM settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Closed-form Theta step: `L - P{C o (P^T L P)}P^T` with
/// `L = Lambda/rho + V_sym - W` and `C_ij = g_i g_j / (g_i g_j + rho)`.
pub fn theta_update(
    eig: &EigenDecomposition,
    lambda_hat: &DMatrix<f64>,
    v_sym: &DMatrix<f64>,
    w: &DMatrix<f64>,
    rho: f64,
) -> DMatrix<f64> {
    let p = &eig.vectors;
    let g = &eig.values;
    let l = lambda_hat / rho + v_sym - w;
    let mut lt = p.transpose() * &l * p;
    for j in 0..lt.ncols() {
        for i in 0..lt.nrows() {
            let gg = g[i] * g[j];
            lt[(i, j)] *= gg / (gg + rho);
        }
    }
    l - p * lt * p.transpose()
}

/// Everything that depends only on the kernels and `rho`, computed once and
/// shared by every fit on the same data.
#[derive(Debug, Clone)]
pub struct FitContext {
    sigma_hat: SymmetricMatrix,
    lambda_hat: SymmetricMatrix,
    eig: EigenDecomposition,
    pt: DMatrix<f64>,
    /// `rho / (g_i g_j + rho)`, the complement of `C`.
    damp: DMatrix<f64>,
    /// `P^T Lambda P / rho`.
    lambda_rot: DMatrix<f64>,
    config: AdmmConfig,
}

impl FitContext {
    pub fn new(kernels: &KernelEstimates, config: AdmmConfig) -> Result<Self> {
        config.validate()?;
        let eig = sym_eig(&kernels.sigma_hat)?;
        let p = kernels.p();
        let rho = config.rho;
        let g = &eig.values;
        let damp = DMatrix::from_fn(p, p, |i, j| rho / (g[i] * g[j] + rho));
        let pt = eig.vectors.transpose();
        let lambda_rot = &pt * kernels.lambda_hat.as_matrix() * &eig.vectors / rho;
        Ok(Self {
            sigma_hat: kernels.sigma_hat.clone(),
            lambda_hat: kernels.lambda_hat.clone(),
            eig,
            pt,
            damp,
            lambda_rot,
            config,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma_hat.dim()
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }

    pub fn sigma_hat(&self) -> &SymmetricMatrix {
        &self.sigma_hat
    }

    pub fn lambda_hat(&self) -> &SymmetricMatrix {
        &self.lambda_hat
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        &self.eig
    }

    pub fn fit(&self, penalty: &PenaltySpec, lambda: f64) -> Result<FitResult> {
        let mut state = AdmmState::new(self.p(), penalty);
        self.fit_from(penalty, lambda, &mut state)
    }

    /// Run from `state` (warm start) and leave the final iterate in it.
    pub fn fit_from(&self, penalty: &PenaltySpec, lambda: f64, state: &mut AdmmState) -> Result<FitResult> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be non-negative, got {lambda}")));
        }
        let p = self.p();
        state.check(p, penalty)?;
        let rho = self.config.rho;
        let singletons;
        let graph = match penalty {
            PenaltySpec::Graphical(g) => {
                if g.p() != p {
                    return Err(Error::Shape(format!("graph has {} vertices, data has {p} predictors", g.p())));
                }
                Some(g)
            }
            PenaltySpec::RowGroup => {
                singletons = NeighborhoodGraph::singletons(p);
                Some(&singletons)
            }
            PenaltySpec::ElementwiseL1 => None,
        };
        let graphical_dual = matches!(penalty, PenaltySpec::Graphical(_));

        let pm = &self.eig.vectors;
        let mut theta_prev = DMatrix::zeros(p, p);
        let mut vt_prev = DMatrix::zeros(p, p);
        let mut m = DMatrix::zeros(p, p);
        let mut y = DMatrix::zeros(p, p);
        let mut ut = DMatrix::zeros(p, p);
        let mut ready = vec![false; p];
        let mut norms_sq = vec![0.0; p];
        let mut scratch = DVector::zeros(p);
        let mut v_rot_t = DMatrix::zeros(p, p);
        let mut v_rot = DMatrix::zeros(p, p);
        let mut converged = false;
        let mut iterations = 0;

        for it in 1..=self.config.max_iter {
            iterations = it;
            state.iter += 1;
            std::mem::swap(&mut theta_prev, &mut state.theta_rot);
            // Theta step in the eigenbasis of Sigma: an elementwise product
            let theta = &mut state.theta_rot;
            let mut finite = true;
            for ((t, (&d, &l)), (&vs, &w)) in theta
                .as_mut_slice()
                .iter_mut()
                .zip(self.damp.as_slice().iter().zip(self.lambda_rot.as_slice()))
                .zip(state.vs_rot.as_slice().iter().zip(state.w_rot.as_slice()))
            {
                *t = d * (l + vs - w);
                finite &= t.is_finite();
            }
            if !finite {
                return Err(Error::NumericalFailure { iteration: it, message: "non-finite Theta iterate".into() });
            }

            // U = Theta + W = P (Theta~ + W~) P^T; only Y = P (Theta~ + W~) is formed in full
            for (o, (&t, &w)) in m
                .as_mut_slice()
                .iter_mut()
                .zip(state.theta_rot.as_slice().iter().zip(state.w_rot.as_slice()))
            {
                *o = t + w;
            }
            y.gemm(1.0, pm, &m, 0.0);
            std::mem::swap(&mut vt_prev, &mut state.vt);
            match (&mut state.v, graph) {
                (VStore::Blocks(dec), Some(g)) => {
                    row_norms_sq(&y, &mut norms_sq);
                    ready.fill(false);
                    let mut rows = LazyRows {
                        y: &y,
                        p: pm,
                        norms_sq: &norms_sq,
                        ut: &mut ut,
                        ready: &mut ready,
                        scratch: &mut scratch,
                    };
                    graphical_sweep(&mut rows, dec, g, lambda, rho);
                    dec.total_t_into(g, &mut state.vt);
                }
                (VStore::Dense, None) => {
                    // ut holds U itself here
                    ut.gemm(1.0, &y, &self.pt, 0.0);
                    let t = lambda / rho;
                    transpose_map(&ut, &mut state.vt, |v| soft_threshold(v, t));
                }
                _ => unreachable!("state kind checked above"),
            }

            // V~ = P^T V P from the nonzero rows of V only
            let active = nonzero_columns(&state.vt);
            rotate_active(&state.vt, &active, pm, &self.pt, &mut v_rot_t);
            transpose_map(&v_rot_t, &mut v_rot, |v| v);
            for (o, (&a, &b)) in state
                .vs_rot
                .as_mut_slice()
                .iter_mut()
                .zip(v_rot.as_slice().iter().zip(v_rot_t.as_slice()))
            {
                *o = 0.5 * (a + b);
            }
            let target = if graphical_dual { &state.vs_rot } else { &v_rot };
            for (w, (&t, &v)) in state
                .w_rot
                .as_mut_slice()
                .iter_mut()
                .zip(state.theta_rot.as_slice().iter().zip(target.as_slice()))
            {
                *w += t - v;
            }

            let r_primal = frob_diff(&state.theta_rot, &theta_prev);
            let r_dual = rho * frob_diff(&state.vt, &vt_prev);
            if r_primal <= self.config.eps_primal && r_dual <= self.config.eps_dual {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!(
                "{} fit at lambda {lambda:.4e} stopped after {iterations} iterations without converging",
                penalty.name()
            );
        }
        let feasibility = frob_diff(&state.theta_rot, &state.vs_rot);
        let decomposition = match (&state.v, penalty) {
            (VStore::Blocks(dec), _) => Some(dec.clone()),
            _ => None,
        };
        self.finalize(penalty, lambda, &state.vt, decomposition, iterations, converged, feasibility)
    }

    #[allow(clippy::too_many_arguments)]
    fn finalize(
        &self,
        penalty: &PenaltySpec,
        lambda: f64,
        vt: &DMatrix<f64>,
        decomposition: Option<Decomposition>,
        iterations: usize,
        converged: bool,
        feasibility: f64,
    ) -> Result<FitResult> {
        let p = self.p();
        let active = nonzero_columns(vt);
        let mut b = DMatrix::zeros(p, p);
        for &i in &active {
            for &j in &active {
                // vt[(j, i)] is V_ij
                b[(i, j)] = 0.5 * (vt[(j, i)] + vt[(i, j)]);
            }
        }
        let b_hat = SymmetricMatrix::new(b)?;
        let eigenvalues = spectrum(&b_hat, &active)?;
        let kkt_residual = match (penalty, &decomposition) {
            (PenaltySpec::Graphical(g), Some(dec)) => {
                kkt_check(&b_hat, &self.sigma_hat, &self.lambda_hat, g, lambda, Some(dec))?
            }
            (PenaltySpec::RowGroup, Some(dec)) => kkt_check(
                &b_hat,
                &self.sigma_hat,
                &self.lambda_hat,
                &NeighborhoodGraph::singletons(p),
                lambda,
                Some(dec),
            )?,
            _ => l1_kkt_residual(&b_hat, &self.sigma_hat, &self.lambda_hat, &vt.transpose(), lambda),
        };
        Ok(FitResult {
            lambda,
            b_hat,
            active_set: active,
            directions: None,
            eigenvalues,
            iterations,
            converged,
            kkt_residual,
            feasibility,
            decomposition,
        })
    }
}

/// Iterate carried between fits for warm starts. Theta and W are held in the
/// eigenbasis of the covariance estimate, so a state belongs to one
/// [`FitContext`].
#[derive(Debug, Clone)]
pub struct AdmmState {
    theta_rot: DMatrix<f64>,
    w_rot: DMatrix<f64>,
    vs_rot: DMatrix<f64>,
    /// Transpose of `V = sum_i V^(i)`.
    vt: DMatrix<f64>,
    v: VStore,
    pub iter: usize,
}

#[derive(Debug, Clone)]
enum VStore {
    Blocks(Decomposition),
    Dense,
}

impl AdmmState {
    /// Zero start.
    pub fn new(p: usize, penalty: &PenaltySpec) -> Self {
        let v = match penalty {
            PenaltySpec::Graphical(g) => VStore::Blocks(Decomposition::zeros(g)),
            PenaltySpec::RowGroup => VStore::Blocks(Decomposition::zeros(&NeighborhoodGraph::singletons(p))),
            PenaltySpec::ElementwiseL1 => VStore::Dense,
        };
        Self {
            theta_rot: DMatrix::zeros(p, p),
            w_rot: DMatrix::zeros(p, p),
            vs_rot: DMatrix::zeros(p, p),
            vt: DMatrix::zeros(p, p),
            v,
            iter: 0,
        }
    }

    fn check(&self, p: usize, penalty: &PenaltySpec) -> Result<()> {
        let kind_ok = match (&self.v, penalty) {
            (VStore::Blocks(d), PenaltySpec::Graphical(g)) => d.len() == g.p(),
            (VStore::Blocks(d), PenaltySpec::RowGroup) => d.len() == p,
            (VStore::Dense, PenaltySpec::ElementwiseL1) => true,
            _ => false,
        };
        if self.vt.nrows() != p || !kind_ok {
            return Err(Error::Configuration("warm-start state does not match this fit".into()));
        }
        Ok(())
    }

    /// `Theta` in the original coordinates.
    pub fn theta(&self, ctx: &FitContext) -> DMatrix<f64> {
        &ctx.eig.vectors * &self.theta_rot * &ctx.pt
    }

    /// The scaled dual `W` in the original coordinates.
    pub fn w(&self, ctx: &FitContext) -> DMatrix<f64> {
        &ctx.eig.vectors * &self.w_rot * &ctx.pt
    }

    pub fn v(&self) -> DMatrix<f64> {
        self.vt.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub lambda: f64,
    pub b_hat: SymmetricMatrix,
    /// Sorted 0-based indices of the nonzero rows.
    pub active_set: Vec<usize>,
    pub directions: Option<DirectionMatrix>,
    /// Full spectrum of `b_hat`, descending.
    pub eigenvalues: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// `||Theta - (V + V^T)/2||_F` at exit.
    pub feasibility: f64,
    pub decomposition: Option<Decomposition>,
}

impl FitResult {
    pub fn with_directions(mut self, d: usize) -> Result<Self> {
        let (dirs, _) = extract_directions(&self.b_hat, d)?;
        self.directions = Some(dirs);
        Ok(self)
    }

    /// Number of strictly positive eigenvalues.
    pub fn positive_rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&v| v > 0.0).count()
    }
}

/// One-shot fit from zero.
pub fn admm_fit(
    kernels: &KernelEstimates,
    penalty: &PenaltySpec,
    lambda: f64,
    config: AdmmConfig,
) -> Result<FitResult> {
    FitContext::new(kernels, config)?.fit(penalty, lambda)
}

/// Leading `d` eigenvectors of `b_hat` (sign-fixed) and its full spectrum.
pub fn extract_directions(b_hat: &SymmetricMatrix, d: usize) -> Result<(DirectionMatrix, Vec<f64>)> {
    let p = b_hat.dim();
    if d == 0 || d > p {
        return Err(Error::Configuration(format!("d must lie in 1..={p}, got {d}")));
    }
    let active = nonzero_columns(b_hat.as_matrix());
    if !active.is_empty() && active.len() < p {
        let (block_eig, spectrum) = active_eig(b_hat, &active)?;
        let positive = block_eig.values.iter().filter(|&&v| v > 0.0).count();
        if d <= positive {
            let mut out = DMatrix::zeros(p, d);
            for k in 0..d {
                for (a, &i) in active.iter().enumerate() {
                    out[(i, k)] = block_eig.vectors[(a, k)];
                }
            }
            return Ok((DirectionMatrix::new(out)?, spectrum));
        }
    }
    let eig = sym_eig(b_hat)?;
    let dirs = DirectionMatrix::new(eig.leading(d))?;
    Ok((dirs, eig.values))
}

fn active_eig(b_hat: &SymmetricMatrix, active: &[usize]) -> Result<(EigenDecomposition, Vec<f64>)> {
    let a = active.len();
    let m = b_hat.as_matrix();
    let block = SymmetricMatrix::new(DMatrix::from_fn(a, a, |i, j| m[(active[i], active[j])]))?;
    let eig = sym_eig(&block)?;
    let mut spectrum = eig.values.clone();
    spectrum.extend(std::iter::repeat_n(0.0, b_hat.dim() - a));
    spectrum.sort_by(|x, y| y.total_cmp(x));
    Ok((eig, spectrum))
}

fn spectrum(b_hat: &SymmetricMatrix, active: &[usize]) -> Result<Vec<f64>> {
    if active.is_empty() {
        return Ok(vec![0.0; b_hat.dim()]);
    }
    Ok(active_eig(b_hat, active)?.1)
}

fn nonzero_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let n = m.nrows().max(1);
    m.as_slice()
        .chunks(n)
        .enumerate()
        .filter(|(_, c)| c.iter().any(|&v| v != 0.0))
        .map(|(j, _)| j)
        .collect()
}

fn row_norms_sq(y: &DMatrix<f64>, out: &mut [f64]) {
    out.fill(0.0);
    let n = y.nrows().max(1);
    for col in y.as_slice().chunks(n) {
        for (o, &v) in out.iter_mut().zip(col) {
            *o += v * v;
        }
    }
}

/// `out = f(src)^T`, blocked for cache reuse.
fn transpose_map(src: &DMatrix<f64>, out: &mut DMatrix<f64>, f: impl Fn(f64) -> f64) {
    const TILE: usize = 32;
    let (r, c) = src.shape();
    let s = src.as_slice();
    let o = out.as_mut_slice();
    for jb in (0..c).step_by(TILE) {
        for ib in (0..r).step_by(TILE) {
            for j in jb..(jb + TILE).min(c) {
                for i in ib..(ib + TILE).min(r) {
                    // src(i, j) -> out(j, i)
                    o[j + i * c] = f(s[i + j * r]);
                }
            }
        }
    }
}

/// `out = (P^T V P)^T` given `vt = V^T` whose nonzero columns are `active`.
fn rotate_active(vt: &DMatrix<f64>, active: &[usize], pm: &DMatrix<f64>, pt: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    if active.is_empty() {
        out.fill(0.0);
        return;
    }
    let p = vt.nrows();
    let a = active.len();
    let vt_a = DMatrix::from_fn(p, a, |i, k| vt[(i, active[k])]);
    let p_a = DMatrix::from_fn(a, p, |k, j| pm[(active[k], j)]);
    // (P^T V P)^T = P^T V^T P = (P^T V^T_A) P_A
    let z = pt * vt_a;
    out.gemm(1.0, &z, &p_a, 0.0);
}

fn frob_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests;
