//! Proximal V-updates for the three penalties.

use nalgebra::{DMatrix, DVector};

use crate::graph::NeighborhoodGraph;

/// The latent blocks `V^(i)`. Block `i` is stored transposed (`p x |N_i|`), so
/// column `k` holds row `N_i[k]` of `V^(i)`; rows outside `N_i` are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    blocks_t: Vec<DMatrix<f64>>,
    nonzero: Vec<bool>,
}

impl Decomposition {
    pub fn zeros(graph: &NeighborhoodGraph) -> Self {
        let p = graph.p();
        Self {
            blocks_t: (0..p).map(|i| DMatrix::zeros(p, graph.neighbors(i).len())).collect(),
            nonzero: vec![false; p],
        }
    }

    pub fn len(&self) -> usize {
        self.blocks_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks_t.is_empty()
    }

    /// `V^(i)` restricted to its rows, `|N_i| x p`.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        self.blocks_t[i].transpose()
    }

    pub fn block_t(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks_t[i]
    }

    pub fn is_nonzero(&self, i: usize) -> bool {
        self.nonzero[i]
    }

    /// `sum_i V^(i)` as a full `p x p` matrix.
    pub fn total(&self, graph: &NeighborhoodGraph) -> DMatrix<f64> {
        let mut vt = DMatrix::zeros(graph.p(), graph.p());
        self.total_t_into(graph, &mut vt);
        vt.transpose()
    }

    /// Transposed total, rebuilt exactly from the blocks so that zero rows stay
    /// exactly zero.
    pub(crate) fn total_t_into(&self, graph: &NeighborhoodGraph, vt: &mut DMatrix<f64>) {
        vt.as_mut_slice().fill(0.0);
        for r in 0..graph.p() {
            for &j in graph.neighbors(r) {
                if self.nonzero[j] {
                    let k = graph.position(j, r).expect("graph is symmetric");
                    let mut col = vt.column_mut(r);
                    col += self.blocks_t[j].column(k);
                }
            }
        }
    }
}

/// Access to rows of `U = Theta + W`.
pub(crate) trait Rows {
    fn norm_sq(&mut self, r: usize) -> f64;
    fn row(&mut self, r: usize) -> &[f64];
}

/// Rows read off an explicit matrix (stored transposed).
pub(crate) struct DenseRows {
    ut: DMatrix<f64>,
}

impl DenseRows {
    pub(crate) fn new(u: &DMatrix<f64>) -> Self {
        Self { ut: u.transpose() }
    }
}

impl Rows for DenseRows {
    fn norm_sq(&mut self, r: usize) -> f64 {
        self.ut.column(r).norm_squared()
    }

    fn row(&mut self, r: usize) -> &[f64] {
        let p = self.ut.nrows();
        &self.ut.as_slice()[r * p..(r + 1) * p]
    }
}

/// Rows of `U = Y P^T`, materialized on demand. Row norms come straight from
/// `Y` because `P` is orthogonal.
pub(crate) struct LazyRows<'a> {
    pub(crate) y: &'a DMatrix<f64>,
    pub(crate) p: &'a DMatrix<f64>,
    pub(crate) norms_sq: &'a [f64],
    pub(crate) ut: &'a mut DMatrix<f64>,
    pub(crate) ready: &'a mut [bool],
    pub(crate) scratch: &'a mut DVector<f64>,
}

impl Rows for LazyRows<'_> {
    fn norm_sq(&mut self, r: usize) -> f64 {
        self.norms_sq[r]
    }

    fn row(&mut self, r: usize) -> &[f64] {
        let p = self.ut.nrows();
        if !self.ready[r] {
            for (k, s) in self.scratch.iter_mut().enumerate() {
                *s = self.y[(r, k)];
            }
            self.ut.column_mut(r).gemv(1.0, self.p, &*self.scratch, 0.0);
            self.ready[r] = true;
        }
        &self.ut.as_slice()[r * p..(r + 1) * p]
    }
}

/// One Gauss-Seidel sweep: multi-member groups in ascending order, then the
/// singletons.
pub(crate) fn graphical_sweep<R: Rows>(
    rows: &mut R,
    dec: &mut Decomposition,
    graph: &NeighborhoodGraph,
    lambda: f64,
    rho: f64,
) {
    let p = graph.p();
    let groups = (0..p).filter(|&i| !graph.is_singleton(i));
    let singles = (0..p).filter(|&i| graph.is_singleton(i));
    let mut work = DMatrix::<f64>::zeros(p, 1);
    for i in groups.chain(singles) {
        let ni = graph.neighbors(i);
        let thr = lambda * graph.weight(i) / rho;
        let others = ni
            .iter()
            .any(|&r| graph.neighbors(r).iter().any(|&j| j != i && dec.nonzero[j]));
        if !others {
            let nsq: f64 = ni.iter().map(|&r| rows.norm_sq(r)).sum();
            let norm = nsq.sqrt();
            if norm <= thr {
                clear(dec, i);
            } else {
                let scale = 1.0 - thr / norm;
                for (k, &r) in ni.iter().enumerate() {
                    let src = rows.row(r);
                    for (dst, &s) in dec.blocks_t[i].column_mut(k).iter_mut().zip(src) {
                        *dst = scale * s;
                    }
                }
                dec.nonzero[i] = true;
            }
            continue;
        }
        if work.ncols() != ni.len() {
            work = DMatrix::zeros(p, ni.len());
        }
        for (k, &r) in ni.iter().enumerate() {
            work.column_mut(k).copy_from_slice(rows.row(r));
            for &j in graph.neighbors(r) {
                if j != i && dec.nonzero[j] {
                    let kj = graph.position(j, r).expect("graph is symmetric");
                    let mut col = work.column_mut(k);
                    col -= dec.blocks_t[j].column(kj);
                }
            }
        }
        let norm = work.norm();
        if norm <= thr {
            clear(dec, i);
        } else {
            dec.blocks_t[i].copy_from(&work);
            dec.blocks_t[i] *= 1.0 - thr / norm;
            dec.nonzero[i] = true;
        }
    }
}

fn clear(dec: &mut Decomposition, i: usize) {
    if dec.nonzero[i] {
        dec.blocks_t[i].fill(0.0);
        dec.nonzero[i] = false;
    }
}

/// Latent-group proximal step given `U = Theta + W`; updates the blocks in
/// place and returns their sum.
pub fn graphical_v_update(
    u: &DMatrix<f64>,
    dec: &mut Decomposition,
    graph: &NeighborhoodGraph,
    lambda: f64,
    rho: f64,
) -> DMatrix<f64> {
    let mut rows = DenseRows::new(u);
    graphical_sweep(&mut rows, dec, graph, lambda, rho);
    dec.total(graph)
}

/// Elementwise soft-threshold at `lambda / rho`.
pub fn l1_v_update(u: &DMatrix<f64>, lambda: f64, rho: f64) -> DMatrix<f64> {
    let t = lambda / rho;
    u.map(|x| soft_threshold(x, t))
}

/// Row-wise group soft-threshold at `lambda / rho`.
pub fn rowgroup_v_update(u: &DMatrix<f64>, lambda: f64, rho: f64) -> DMatrix<f64> {
    let t = lambda / rho;
    let mut v = u.clone();
    for mut row in v.row_iter_mut() {
        let norm = row.norm();
        if norm <= t {
            row.fill(0.0);
        } else {
            row *= 1.0 - t / norm;
        }
    }
    v
}

pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}
