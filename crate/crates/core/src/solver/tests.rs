use super::*;
use crate::data::{ResponseSet, Sample};
use crate::graph::neighborhoods_from_precision;
use crate::kernels::{estimate, KernelKind};
use crate::matrix::{cholesky_sample, max_abs_diff};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
    let a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    SymmetricMatrix::new(&a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5).unwrap()
}

fn random_sym(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// Kernels from `y = x_0 + x_1 + noise` with the absolute-difference metric.
fn toy_kernels(n: usize, p: usize, seed: u64) -> KernelEstimates {
    let x = cholesky_sample(&SymmetricMatrix::identity(p), n, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + x[(i, 1)] + 0.2 * rng.random_range(-1.0..1.0)).collect();
    let sample = Sample::new(x, ResponseSet::Scalar(y)).unwrap();
    estimate(&sample, KernelKind::Wire).unwrap()
}

/// Pairs (0,1) and (2,3) joined, the rest alone.
fn pair_graph(p: usize) -> NeighborhoodGraph {
    let mut om = DMatrix::identity(p, p);
    for (a, b) in [(0, 1), (2, 3)] {
        om[(a, b)] = 0.3;
        om[(b, a)] = 0.3;
    }
    neighborhoods_from_precision(&SymmetricMatrix::new(om).unwrap(), 1e-8)
}

fn kron_oracle(sigma: &DMatrix<f64>, rhs: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let p = sigma.nrows();
    let k = sigma.kronecker(sigma) + DMatrix::identity(p * p, p * p) * rho;
    let b = DVector::from_column_slice(rhs.as_slice());
    let x = k.lu().solve(&b).unwrap();
    DMatrix::from_column_slice(p, p, x.as_slice())
}

#[test]
fn theta_identity_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eig = sym_eig(&SymmetricMatrix::identity(4)).unwrap();
    let (l, vs, w) = (random_sym(4, &mut rng), random_sym(4, &mut rng), random_sym(4, &mut rng));
    let rho = 1.7;
    let theta = theta_update(&eig, &l, &vs, &w, rho);
    let expected = (&l + (&vs - &w) * rho) / (1.0 + rho);
    assert!(max_abs_diff(&theta, &expected) < 1e-12);
}

#[test]
fn theta_large_rho() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_spd(5, &mut rng);
    let eig = sym_eig(&s).unwrap();
    let (l, vs, w) = (random_sym(5, &mut rng), random_sym(5, &mut rng), random_sym(5, &mut rng));
    let theta = theta_update(&eig, &l, &vs, &w, 1e8);
    assert!(max_abs_diff(&theta, &(&vs - &w)) < 1e-6);
}

#[test]
fn theta_matches_kronecker_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let s = random_spd(8, &mut rng);
        let eig = sym_eig(&s).unwrap();
        let (l, vs, w) = (random_sym(8, &mut rng), random_sym(8, &mut rng), random_sym(8, &mut rng));
        let rho = rng.random_range(0.2..3.0);
        let theta = theta_update(&eig, &l, &vs, &w, rho);
        let oracle = kron_oracle(s.as_matrix(), &(&l + (&vs - &w) * rho), rho);
        assert!(max_abs_diff(&theta, &oracle) < 1e-8);
    }
}

// ---- proximal steps ----

/// Proximal gradient on the stacked blocks for
/// `rho/2 ||sum_i V^(i) - U||_F^2 + lambda sum_i tau_i ||V^(i)||_F`.
fn latent_prox_oracle(u: &DMatrix<f64>, graph: &NeighborhoodGraph, lambda: f64, rho: f64) -> (DMatrix<f64>, f64) {
    let p = graph.p();
    let mut blocks: Vec<DMatrix<f64>> = (0..p).map(|_| DMatrix::zeros(p, p)).collect();
    let max_deg = (0..p).map(|r| graph.neighbors(r).len()).max().unwrap() as f64;
    let step = 1.0 / (rho * max_deg);
    for _ in 0..200_000 {
        let total: DMatrix<f64> = blocks.iter().fold(DMatrix::zeros(p, p), |acc, b| acc + b);
        let grad = (&total - u) * rho;
        let mut moved = 0.0_f64;
        for i in 0..p {
            let mut cand = &blocks[i] - &grad * step;
            for r in 0..p {
                if !graph.neighbors(i).contains(&r) {
                    cand.row_mut(r).fill(0.0);
                }
            }
            let norm = cand.norm();
            let t = step * lambda * graph.weight(i);
            let cand = if norm <= t { DMatrix::zeros(p, p) } else { cand * (1.0 - t / norm) };
            moved = moved.max((&cand - &blocks[i]).amax());
            blocks[i] = cand;
        }
        if moved < 1e-14 {
            break;
        }
    }
    let total: DMatrix<f64> = blocks.iter().fold(DMatrix::zeros(p, p), |acc, b| acc + b);
    let obj = rho / 2.0 * (&total - u).norm_squared()
        + lambda * (0..p).map(|i| graph.weight(i) * blocks[i].norm()).sum::<f64>();
    (total, obj)
}

fn latent_objective(v: &DMatrix<f64>, dec: &Decomposition, u: &DMatrix<f64>, graph: &NeighborhoodGraph, lambda: f64, rho: f64) -> f64 {
    rho / 2.0 * (v - u).norm_squared()
        + lambda * (0..graph.p()).map(|i| graph.weight(i) * dec.block_t(i).norm()).sum::<f64>()
}

#[test]
fn graphical_prox_full_shrinkage_and_identity() {
    let g = pair_graph(5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = DMatrix::<f64>::from_fn(5, 5, |_, _| rng.random_range(-0.1..0.1));
    let mut dec = Decomposition::zeros(&g);
    let v = graphical_v_update(&u, &mut dec, &g, 10.0, 1.0);
    assert!(v.iter().all(|&x| x == 0.0));
    assert!((0..5).all(|i| !dec.is_nonzero(i)));

    let mut dec = Decomposition::zeros(&g);
    let v = graphical_v_update(&u, &mut dec, &g, 0.0, 1.0);
    assert_eq!(v, u);
}

#[test]
fn graphical_prox_matches_oracle_on_clique() {
    let mut om = DMatrix::identity(5, 5);
    for a in 0..3 {
        for b in 0..3 {
            om[(a, b)] = if a == b { 1.0 } else { 0.2 };
        }
    }
    let g = neighborhoods_from_precision(&SymmetricMatrix::new(om).unwrap(), 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(lambda, rho) in &[(0.3, 1.0), (0.8, 2.0), (0.05, 0.5)] {
        let u = DMatrix::<f64>::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let mut dec = Decomposition::zeros(&g);
        let v = graphical_v_update(&u, &mut dec, &g, lambda, rho);
        let (oracle, obj) = latent_prox_oracle(&u, &g, lambda, rho);
        assert!(max_abs_diff(&v, &oracle) < 1e-6, "{v} vs {oracle}");
        assert!((latent_objective(&v, &dec, &u, &g, lambda, rho) - obj).abs() < 1e-8);
    }
}

#[test]
fn repeated_sweeps_reach_the_prox_on_overlapping_groups() {
    // chain 0-1-2: neighborhoods overlap without being equal
    let g = NeighborhoodGraph::from_adjacency(4, &[vec![1], vec![2], vec![], vec![]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = DMatrix::<f64>::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let mut dec = Decomposition::zeros(&g);
    let mut v = DMatrix::zeros(4, 4);
    for _ in 0..5000 {
        v = graphical_v_update(&u, &mut dec, &g, 0.2, 1.0);
    }
    let (oracle, obj) = latent_prox_oracle(&u, &g, 0.2, 1.0);
    assert!((latent_objective(&v, &dec, &u, &g, 0.2, 1.0) - obj).abs() < 1e-8);
    assert!(max_abs_diff(&v, &oracle) < 1e-6);
}

#[test]
fn l1_prox_examples() {
    let u = DMatrix::from_row_slice(1, 3, &[0.5, -0.1, -0.7]);
    let v = l1_v_update(&u, 0.2, 1.0);
    assert!((v[(0, 0)] - 0.3).abs() < 1e-15);
    assert_eq!(v[(0, 1)], 0.0);
    assert!((v[(0, 2)] + 0.5).abs() < 1e-15);

    // bisection on the (monotone) subdifferential of rho/2 (v-u)^2 + lambda |v|
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = DMatrix::<f64>::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
    let (lambda, rho) = (0.6, 1.5);
    let v = l1_v_update(&u, lambda, rho);
    for (&ui, &vi) in u.iter().zip(v.iter()) {
        let left = |x: f64| rho * (x - ui) + if x > 0.0 { lambda } else { -lambda };
        let right = |x: f64| rho * (x - ui) + if x >= 0.0 { lambda } else { -lambda };
        let (mut a, mut b) = (-2.0_f64, 2.0_f64);
        let mut root = 0.5 * (a + b);
        for _ in 0..200 {
            root = 0.5 * (a + b);
            if right(root) < 0.0 {
                a = root;
            } else if left(root) > 0.0 {
                b = root;
            } else {
                break;
            }
        }
        assert!((vi - root).abs() < 1e-10, "{vi} vs {root}");
    }
}

#[test]
fn rowgroup_prox_examples() {
    let u = DMatrix::from_row_slice(2, 2, &[0.1, 0.1, 3.0, 4.0]);
    let v = rowgroup_v_update(&u, 1.0, 1.0);
    assert_eq!(v.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    assert!((v[(1, 0)] - 2.4).abs() < 1e-15 && (v[(1, 1)] - 3.2).abs() < 1e-15);
    assert_eq!(rowgroup_v_update(&u, 0.0, 1.0), u);

    // the singleton graph with unit weights is the same operator
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
    let g = NeighborhoodGraph::singletons(6);
    let (oracle, _) = latent_prox_oracle(&u, &g, 0.9, 1.3);
    assert!(max_abs_diff(&rowgroup_v_update(&u, 0.9, 1.3), &oracle) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graphical_prox_is_homogeneous(seed in any::<u64>(), c in 0.1f64..10.0, lambda in 0.0f64..1.0) {
        let g = pair_graph(6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let v1 = graphical_v_update(&u, &mut Decomposition::zeros(&g), &g, lambda, 1.0);
        let v2 = graphical_v_update(&(&u * c), &mut Decomposition::zeros(&g), &g, lambda * c, 1.0);
        prop_assert!(max_abs_diff(&(v1 * c), &v2) < 1e-12 * c.max(1.0));
    }

    #[test]
    fn theta_matches_kronecker_on_random_inputs(seed in any::<u64>(), p in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_spd(p, &mut rng);
        let eig = sym_eig(&s).unwrap();
        let (l, vs, w) = (random_sym(p, &mut rng), random_sym(p, &mut rng), random_sym(p, &mut rng));
        let theta = theta_update(&eig, &l, &vs, &w, 1.0);
        let oracle = kron_oracle(s.as_matrix(), &(&l + &vs - &w), 1.0);
        prop_assert!(max_abs_diff(&theta, &oracle) < 1e-8);
    }
}

// ---- full fits ----

/// Plain ADMM in the original coordinates using the public building blocks.
fn reference_admm(k: &KernelEstimates, penalty: &PenaltySpec, lambda: f64, rho: f64, iters: usize) -> DMatrix<f64> {
    let p = k.p();
    let eig = sym_eig(&k.sigma_hat).unwrap();
    let (mut w, mut v) = (DMatrix::zeros(p, p), DMatrix::<f64>::zeros(p, p));
    let singles = NeighborhoodGraph::singletons(p);
    let graph = match penalty {
        PenaltySpec::Graphical(g) => g,
        _ => &singles,
    };
    let mut dec = Decomposition::zeros(graph);
    for _ in 0..iters {
        let vs = (&v + v.transpose()) * 0.5;
        let theta = theta_update(&eig, k.lambda_hat.as_matrix(), &vs, &w, rho);
        let u = &theta + &w;
        v = match penalty {
            PenaltySpec::Graphical(_) => graphical_v_update(&u, &mut dec, graph, lambda, rho),
            PenaltySpec::RowGroup => rowgroup_v_update(&u, lambda, rho),
            PenaltySpec::ElementwiseL1 => l1_v_update(&u, lambda, rho),
        };
        w = match penalty {
            PenaltySpec::Graphical(_) => w + theta - (&v + v.transpose()) * 0.5,
            _ => w + theta - &v,
        };
    }
    v
}

#[test]
fn fast_iterates_match_the_reference() {
    let k = toy_kernels(80, 8, 11);
    let cfg = AdmmConfig { rho: 1.0, eps_primal: 1e-300, eps_dual: 1e-300, max_iter: 40 };
    let ctx = FitContext::new(&k, cfg).unwrap();
    for penalty in [PenaltySpec::Graphical(pair_graph(8)), PenaltySpec::RowGroup, PenaltySpec::ElementwiseL1] {
        let lambda = 0.3 * penalty.lambda_max(&k.lambda_hat);
        let mut state = AdmmState::new(8, &penalty);
        ctx.fit_from(&penalty, lambda, &mut state).unwrap();
        let reference = reference_admm(&k, &penalty, lambda, 1.0, 40);
        assert!(max_abs_diff(&state.v(), &reference) < 1e-10, "{}", penalty.name());
    }
}

#[test]
fn zero_kernel_gives_zero_fit_at_once() {
    let mut k = toy_kernels(30, 5, 1);
    k.lambda_hat = SymmetricMatrix::zeros(5);
    let fit = admm_fit(&k, &PenaltySpec::Graphical(pair_graph(5)), 0.1, AdmmConfig::default()).unwrap();
    assert_eq!(fit.iterations, 1);
    assert!(fit.converged && fit.active_set.is_empty());
    assert!(fit.b_hat.as_matrix().iter().all(|&v| v == 0.0));
    assert_eq!(fit.kkt_residual, 0.0);
}

#[test]
fn lambda_max_examples() {
    let g = NeighborhoodGraph::singletons(3);
    assert_eq!(lambda_max(&SymmetricMatrix::zeros(3), &g), 0.0);
    let l = SymmetricMatrix::new(DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0])).unwrap();
    assert_eq!(lambda_max(&l, &g), 3.0);
}

#[test]
fn above_lambda_max_is_all_zero() {
    let k = toy_kernels(100, 10, 3);
    for penalty in [PenaltySpec::Graphical(pair_graph(10)), PenaltySpec::RowGroup, PenaltySpec::ElementwiseL1] {
        let lmax = penalty.lambda_max(&k.lambda_hat);
        let fit = admm_fit(&k, &penalty, 1.01 * lmax, AdmmConfig::default()).unwrap();
        assert!(fit.active_set.is_empty(), "{}", penalty.name());
        let below = admm_fit(&k, &penalty, 0.7 * lmax, AdmmConfig::default()).unwrap();
        assert!(!below.active_set.is_empty(), "{}", penalty.name());
    }
}

#[test]
fn unpenalized_fit_recovers_direct_inverse() {
    let k = toy_kernels(200, 6, 4);
    let fit = admm_fit(&k, &PenaltySpec::Graphical(pair_graph(6)), 1e-8, AdmmConfig::default().with_eps(1e-8)).unwrap();
    assert!(fit.converged);
    let inv = k.sigma_hat.as_matrix().clone().try_inverse().unwrap();
    let direct = &inv * k.lambda_hat.as_matrix() * &inv;
    assert!(fit.b_hat.max_abs_diff(&direct) < 1e-4);
}

#[test]
fn fit_invariants() {
    let k = toy_kernels(120, 12, 5);
    let g = pair_graph(12);
    let penalty = PenaltySpec::Graphical(g);
    let lambda = 0.3 * penalty.lambda_max(&k.lambda_hat);
    let fit = admm_fit(&k, &penalty, lambda, AdmmConfig::default().with_eps(1e-6)).unwrap();
    assert!(fit.converged);
    assert!(fit.feasibility <= 1e-6 * 10.0);
    let b = fit.b_hat.as_matrix();
    for i in 0..12 {
        let inside = fit.active_set.contains(&i);
        for j in 0..12 {
            assert_eq!(b[(i, j)], b[(j, i)]);
            if !inside || !fit.active_set.contains(&j) {
                assert_eq!(b[(i, j)], 0.0);
            }
        }
    }
    // the true support {0, 1} should be found
    assert!(fit.active_set.contains(&0) && fit.active_set.contains(&1));
}

#[test]
fn warm_start_agrees_with_cold_start() {
    let k = toy_kernels(100, 10, 6);
    let penalty = PenaltySpec::Graphical(pair_graph(10));
    let lmax = penalty.lambda_max(&k.lambda_hat);
    let cfg = AdmmConfig::default().with_eps(1e-9);
    let ctx = FitContext::new(&k, cfg).unwrap();
    let mut state = AdmmState::new(10, &penalty);
    ctx.fit_from(&penalty, 0.6 * lmax, &mut state).unwrap();
    let warm = ctx.fit_from(&penalty, 0.3 * lmax, &mut state).unwrap();
    let cold = ctx.fit(&penalty, 0.3 * lmax).unwrap();
    assert_eq!(warm.active_set, cold.active_set);
    assert!(warm.b_hat.max_abs_diff(cold.b_hat.as_matrix()) < 1e-6);
}

#[test]
fn kkt_needs_solver_state() {
    let k = toy_kernels(50, 4, 7);
    let g = NeighborhoodGraph::singletons(4);
    let r = kkt_check(&SymmetricMatrix::zeros(4), &k.sigma_hat, &k.lambda_hat, &g, 1.0, None);
    assert_eq!(r, Err(Error::RequiresSolverState));
    let zero = Decomposition::zeros(&g);
    let lmax = lambda_max(&k.lambda_hat, &g);
    let r = kkt_check(&SymmetricMatrix::zeros(4), &k.sigma_hat, &k.lambda_hat, &g, lmax, Some(&zero));
    assert_eq!(r, Ok(0.0));
}

#[test]
fn kkt_grows_when_the_fit_is_perturbed() {
    let k = toy_kernels(150, 8, 8);
    let g = pair_graph(8);
    let penalty = PenaltySpec::Graphical(g.clone());
    let lambda = 0.3 * penalty.lambda_max(&k.lambda_hat);
    let fit = admm_fit(&k, &penalty, lambda, AdmmConfig::default().with_eps(1e-10)).unwrap();
    let base = fit.kkt_residual;
    let i = fit.active_set[0];
    let mut b = fit.b_hat.as_matrix().clone();
    b[(i, i)] += 0.1;
    let bumped = SymmetricMatrix::new(b).unwrap();
    let r = kkt_check(&bumped, &k.sigma_hat, &k.lambda_hat, &g, lambda, fit.decomposition.as_ref()).unwrap();
    assert!(r > base);
}

/// At a fixed point `Theta = sym(V)` and `rho W = Lambda - Sigma sym(V) Sigma`,
/// so every group satisfies the subgradient condition with
/// `R - rho skew(V)` in place of `R`.
#[test]
fn fixed_point_carries_the_skew_term() {
    let k = toy_kernels(150, 8, 9);
    let g = pair_graph(8);
    let penalty = PenaltySpec::Graphical(g.clone());
    let lambda = 0.3 * penalty.lambda_max(&k.lambda_hat);
    let ctx = FitContext::new(&k, AdmmConfig::default().with_eps(1e-11)).unwrap();
    let mut state = AdmmState::new(8, &penalty);
    let fit = ctx.fit_from(&penalty, lambda, &mut state).unwrap();
    assert!(fit.converged);
    let v = state.v();
    let vs = (&v + v.transpose()) * 0.5;
    let skew = (&v - v.transpose()) * 0.5;
    let r = k.lambda_hat.as_matrix() - k.sigma_hat.as_matrix() * &vs * k.sigma_hat.as_matrix() - skew;
    let dec = fit.decomposition.as_ref().unwrap();
    for i in 0..8 {
        let ni = g.neighbors(i);
        let rows = DMatrix::from_fn(ni.len(), 8, |a, c| r[(ni[a], c)]);
        let block = dec.block(i);
        let lt = lambda * g.weight(i);
        if dec.is_nonzero(i) {
            let gap = (&rows - &block * (lt / block.norm())).norm();
            assert!(gap < 1e-8, "group {i}: {gap}");
        } else {
            assert!(rows.norm() <= lt + 1e-8);
        }
    }
}

#[test]
fn directions_examples() {
    let v = DVector::from_vec(vec![0.0, -3.0, 4.0, 0.0]);
    let b = SymmetricMatrix::new(&v * v.transpose()).unwrap();
    let (dirs, values) = extract_directions(&b, 1).unwrap();
    let expected = [0.0, -0.6, 0.8, 0.0];
    for (a, e) in dirs.columns().iter().zip(expected) {
        assert!((a - e).abs() < 1e-12);
    }
    assert!((values[0] - 25.0).abs() < 1e-10);
    assert_eq!(values.len(), 4);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = SymmetricMatrix::new(random_sym(5, &mut rng)).unwrap();
    let (full, _) = extract_directions(&s, 5).unwrap();
    let q = full.columns();
    assert!(max_abs_diff(&(q.transpose() * q), &DMatrix::identity(5, 5)) < 1e-10);

    assert!(matches!(extract_directions(&s, 0), Err(Error::Configuration(_))));
    assert!(matches!(extract_directions(&s, 6), Err(Error::Configuration(_))));
}

#[test]
fn block_and_full_directions_agree() {
    let k = toy_kernels(150, 10, 10);
    let penalty = PenaltySpec::Graphical(pair_graph(10));
    let fit = admm_fit(&k, &penalty, 0.2 * penalty.lambda_max(&k.lambda_hat), AdmmConfig::default()).unwrap();
    let (fast, vals) = extract_directions(&fit.b_hat, 1).unwrap();
    let full = sym_eig(&fit.b_hat).unwrap();
    assert!(max_abs_diff(fast.columns(), &full.leading(1)) < 1e-10);
    for (a, b) in vals.iter().zip(&full.values) {
        assert!((a - b).abs() < 1e-10);
    }
}
