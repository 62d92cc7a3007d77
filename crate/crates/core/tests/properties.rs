//! Property tests for the structural invariants.

mod common;

use common::gaussian;
use dcf_pca::matrix::{singular_values_lowrank, DenseMatrix};
use dcf_pca::problem::{generate, partition, RpcaProblem};
use dcf_pca::rng::SplitMix64;
use dcf_pca::runtime::{run, EtaSchedule, Hyperparams};
use dcf_pca::solver::{huber, soft_threshold};
use proptest::prelude::*;

fn arb_matrix(max_dim: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_dim, 1..=max_dim, any::<u64>()).prop_map(|(r, c, seed)| {
        let mut rng = SplitMix64::new(seed);
        DenseMatrix::gaussian(r, c, 1.0, &mut rng)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..8, k in 1usize..8,
                             l in 1usize..8, n in 1usize..8) {
        let a = gaussian(m, k, 1.0, seed);
        let b = gaussian(k, l, 1.0, seed ^ 1);
        let c = gaussian(l, n, 1.0, seed ^ 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.frobenius_norm().max(1.0);
        prop_assert!(left.sub(&right).unwrap().frobenius_norm() <= 1e-9 * scale);
    }

    #[test]
    fn dmat_round_trip_is_bit_exact(mat in arb_matrix(10)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dmat");
        mat.write_dmat(&path).unwrap();
        let back = DenseMatrix::read_dmat(&path).unwrap();
        prop_assert_eq!(mat, back);
    }

    #[test]
    fn factor_product_never_beats_variational_bound(seed in any::<u64>(),
                                                    m in 2usize..12, n in 2usize..12,
                                                    p in 1usize..5) {
        // Nuclear norm of U V^T is at most (||U||_F^2 + ||V||_F^2) / 2.
        let u = gaussian(m, p, 1.0, seed);
        let v = gaussian(n, p, 1.0, seed ^ 3);
        let nuc = dcf_pca::matrix::nuclear_norm_small(&u.matmul_nt(&v).unwrap()).unwrap();
        let bound = 0.5 * (u.frobenius_norm_sq() + v.frobenius_norm_sq());
        prop_assert!(nuc <= bound * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn partition_widths_cover_and_rebuild(n in 1usize..60, e_raw in 1usize..60, seed in any::<u64>()) {
        let clients = e_raw.min(n);
        let problem = generate(4, n, 1, 0.2, seed).unwrap();
        let part = partition(&problem, clients).unwrap();
        prop_assert_eq!(part.col_ranges.len(), clients);
        let widths: Vec<usize> = part.col_ranges.iter().map(|(a, b)| b - a).collect();
        prop_assert_eq!(widths.iter().sum::<usize>(), n);
        let max = *widths.iter().max().unwrap();
        let min = *widths.iter().min().unwrap();
        prop_assert!(max - min <= 1);
        // Concatenating the column blocks reproduces M bit for bit.
        let blocks: Vec<DenseMatrix> = part
            .col_ranges
            .iter()
            .map(|&(a, b)| problem.observed.column_block(a, b).unwrap())
            .collect();
        let refs: Vec<&DenseMatrix> = blocks.iter().collect();
        prop_assert_eq!(DenseMatrix::concat_cols(&refs).unwrap(), problem.observed);
    }

    #[test]
    fn generated_problems_hold_their_invariants(m in 2usize..16, n in 2usize..16,
                                                seed in any::<u64>(), s_pct in 1usize..99) {
        let s = s_pct as f64 / 100.0;
        let r = 1 + seed as usize % m.min(n);
        let problem = generate(m, n, r, s, seed).unwrap();
        // Exact sparse count.
        let expect = RpcaProblem::sparse_count(m, n, s);
        let nonzeros = problem.truth_sparse.data().iter().filter(|&&x| x != 0.0).count();
        prop_assert_eq!(nonzeros, expect);
        // All sparse magnitudes are sqrt(m n).
        let mag = ((m * n) as f64).sqrt();
        for &x in problem.truth_sparse.data() {
            prop_assert!(x == 0.0 || x.abs() == mag);
        }
        // M - (L0 + S0) is exactly zero entrywise.
        let sum = problem.truth_low_rank.add(&problem.truth_sparse).unwrap();
        prop_assert_eq!(&problem.observed, &sum);
    }

    #[test]
    fn huber_is_continuous_and_convex_at_knots(x in -10.0f64..10.0, lambda in 0.01f64..5.0) {
        // Continuity across the knots.
        let eps = 1e-9;
        let at = huber(x, lambda);
        prop_assert!((huber(x + eps, lambda) - at).abs() < 1e-7);
        // Midpoint convexity against a random chord partner.
        let y = -0.7 * x + 0.3;
        let mid = huber(0.5 * (x + y), lambda);
        prop_assert!(mid <= 0.5 * huber(x, lambda) + 0.5 * huber(y, lambda) + 1e-12);
        // Knot value from both branches.
        let quad = 0.5 * lambda * lambda;
        prop_assert!((huber(lambda, lambda) - quad).abs() < 1e-12);
        prop_assert!((huber(-lambda, lambda) - quad).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_dead_zone_and_shrinkage(r in -10.0f64..10.0, lambda in 0.01f64..5.0) {
        let m = DenseMatrix::new(1, 1, vec![r]).unwrap();
        let s = soft_threshold(&m, lambda)[(0, 0)];
        if r.abs() <= lambda {
            prop_assert_eq!(s, 0.0);
        } else {
            prop_assert!((s.abs() - (r.abs() - lambda)).abs() < 1e-15);
            prop_assert_eq!(s.signum(), r.signum());
        }
    }
}

#[test]
fn relative_error_invariant_under_column_permutation() {
    let truth = generate(10, 12, 2, 0.15, 3).unwrap();
    let low = gaussian(10, 12, 1.0, 4);
    let sparse = gaussian(10, 12, 0.5, 5);
    let base = dcf_pca::eval::relative_error(&low, &sparse, &truth).unwrap();

    // Apply one fixed permutation to every matrix in the quadruple.
    let mut perm: Vec<usize> = (0..12).collect();
    let mut rng = SplitMix64::new(9);
    for i in (1..12).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    let apply = |m: &DenseMatrix| {
        DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, perm[j])])
    };
    let permuted = RpcaProblem::from_parts(
        truth.true_rank,
        truth.sparsity,
        truth.seed,
        apply(&truth.truth_low_rank),
        apply(&truth.truth_sparse),
        None,
    )
    .unwrap();
    let permuted_err =
        dcf_pca::eval::relative_error(&apply(&low), &apply(&sparse), &permuted).unwrap();
    assert!((base - permuted_err).abs() <= 1e-12 * base.max(1.0));
}

#[test]
fn sv_error_invariant_under_factor_rotation() {
    let truth = generate(14, 11, 3, 0.1, 6).unwrap();
    let u = gaussian(14, 3, 1.0, 7);
    let v = gaussian(11, 3, 1.0, 8);
    let base = dcf_pca::eval::sv_error(&u, &v, &truth).unwrap();

    // Random orthogonal Q from the QR of a Gaussian matrix.
    let (q, _) = gaussian(3, 3, 1.0, 9).qr_thin().unwrap();
    let ur = u.matmul(&q).unwrap();
    let vr = v.matmul(&q).unwrap();
    let rotated = dcf_pca::eval::sv_error(&ur, &vr, &truth).unwrap();
    for (a, b) in base.sv_recovered.iter().zip(&rotated.sv_recovered) {
        assert!((a - b).abs() <= 1e-9 * base.sv_recovered[0].max(1.0));
    }
    assert!((base.sv_rel_error - rotated.sv_rel_error).abs() < 1e-9);
}

#[test]
fn lowrank_values_match_on_all_small_instances() {
    // Low-rank route vs dense Jacobi on the explicit product, m, n <= 100.
    for (m, n, p, seed) in [(100, 80, 6, 1u64), (60, 100, 4, 2), (100, 100, 8, 3)] {
        let u = gaussian(m, p, 1.0, seed);
        let v = gaussian(n, p, 1.0, seed ^ 0xF00);
        let fast = singular_values_lowrank(&u, &v).unwrap();
        let dense = u.matmul_nt(&v).unwrap().jacobi_svd().unwrap().sigma;
        for i in 0..p {
            assert!(
                (fast[i] - dense[i]).abs() <= 1e-8 * fast[0],
                "({m},{n},{p}) sigma_{i}"
            );
        }
    }
}

#[test]
fn trace_is_deterministic_across_worker_counts() {
    let problem = generate(24, 20, 3, 0.1, 13).unwrap();
    let mut hp = Hyperparams::recommended(&problem, 3);
    hp.clients = 5;
    hp.rounds = 6;
    hp.seed = 13;
    hp.eta = EtaSchedule::SqrtDecay(0.05);
    let mut csvs = Vec::new();
    for workers in [1, 2, 4] {
        let mut hp_w = hp.clone();
        hp_w.workers = workers;
        let out = run(&problem, &hp_w).unwrap();
        csvs.push(out.trace.to_csv(&[], false));
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}

#[test]
fn warm_start_toggle_changes_effort_not_fixed_point() {
    // With and without warm starts the inner solver lands on the same
    // unique optimum at tight tolerance.
    let problem = generate(16, 12, 2, 0.1, 17).unwrap();
    let u = gaussian(16, 2, 1.0, 18);
    let mut warm = dcf_pca::solver::ClientState::new(
        0,
        problem.observed.clone(),
        12,
        u.clone(),
        gaussian(12, 2, 1.0, 19),
    )
    .unwrap();
    warm.sparse = DenseMatrix::zeros(16, 12);
    let cold_cfg = dcf_pca::solver::InnerSolveConfig {
        tol: 1e-12,
        max_iters: 500_000,
        warm_start: false,
        ..dcf_pca::solver::InnerSolveConfig::new(1.0, 0.5)
    };
    let warm_cfg = dcf_pca::solver::InnerSolveConfig {
        warm_start: true,
        ..cold_cfg.clone()
    };
    let a = dcf_pca::solver::solve_inner(&warm, &cold_cfg).unwrap();
    let b = dcf_pca::solver::solve_inner(&warm, &warm_cfg).unwrap();
    let dv = a.right_factor.sub(&b.right_factor).unwrap().frobenius_norm();
    assert!(dv < 1e-9, "optima differ by {dv:e}");
}
