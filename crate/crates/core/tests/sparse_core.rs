mod common;

use common::{sparse_and_dense, to_na};
use macau_core::{apply_k, cg_solve, cg_solve_multi, spmv, spmv_t, CgSettings, DenseMatrix, RidgeGramOperator, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn csr_strategy() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, f64)>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
        let cells = proptest::collection::btree_map((0..r, 0..c), -5.0f64..5.0, 0..(r * c));
        (Just(r), Just(c), cells.prop_map(|m| m.into_iter().map(|((i, j), v)| (i, j, v)).collect()))
    })
}

proptest! {
    #[test]
    fn spmv_and_transpose_are_adjoint(
        (r, c, t) in csr_strategy(),
        seed in any::<u64>(),
    ) {
        let a = SparseMatrix::from_triplets(r, c, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..r).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let v: Vec<f64> = (0..c).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let av = spmv(&a, &v).unwrap();
        let atu = spmv_t(&a, &u).unwrap();
        let lhs: f64 = u.iter().zip(&av).map(|(x, y)| x * y).sum();
        let rhs: f64 = atu.iter().zip(&v).map(|(x, y)| x * y).sum();
        prop_assert!(rel_close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn spmv_matches_dense_product((r, c, t) in csr_strategy()) {
        let a = SparseMatrix::from_triplets(r, c, &t).unwrap();
        let dense = common::dense_from_triplets(r, c, &t);
        let v: Vec<f64> = (0..c).map(|j| j as f64 - 1.5).collect();
        let got = spmv(&a, &v).unwrap();
        let want = &dense * DVector::from_vec(v);
        for (g, w) in got.iter().zip(want.iter()) {
            prop_assert!(rel_close(*g, *w, 1e-12));
        }
    }

    #[test]
    fn apply_k_is_linear(
        (r, c, t) in csr_strategy(),
        lambda in 0.01f64..10.0,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let x = SparseMatrix::from_triplets(r, c, &t).unwrap();
        let u: Vec<f64> = (0..c).map(|j| (j as f64).sin()).collect();
        let v: Vec<f64> = (0..c).map(|j| (j as f64 * 0.7).cos()).collect();
        let combo: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
        let lhs = apply_k(&x, lambda, &combo).unwrap();
        let ku = apply_k(&x, lambda, &u).unwrap();
        let kv = apply_k(&x, lambda, &v).unwrap();
        let scale = ku.iter().chain(&kv).map(|z| z.abs()).fold(1.0, f64::max) * (a.abs() + b.abs()).max(1.0);
        for i in 0..c {
            let rhs = a * ku[i] + b * kv[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * scale, "{} vs {}", lhs[i], rhs);
        }
    }

    #[test]
    fn apply_k_is_positive_definite(
        (r, c, t) in csr_strategy(),
        lambda in 0.01f64..10.0,
        seed in any::<u64>(),
    ) {
        let x = SparseMatrix::from_triplets(r, c, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..c).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let kv = apply_k(&x, lambda, &v).unwrap();
        let vkv: f64 = v.iter().zip(&kv).map(|(p, q)| p * q).sum();
        let vv: f64 = v.iter().map(|p| p * p).sum();
        prop_assert!(vkv >= lambda * vv * (1.0 - 1e-12));
    }
}

#[test]
fn cg_converges_within_f_plus_five_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let f = 2 + trial % 49;
        let n = 2 * f;
        let (x, _) = sparse_and_dense(n, f, 0.2, &mut rng);
        let op = RidgeGramOperator::new(&x, 1.0).unwrap();
        let b: Vec<f64> = (0..f).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let settings = CgSettings { max_iterations: Some(f + 5), ..Default::default() };
        let col = cg_solve(&op, &b, &settings).unwrap_or_else(|e| panic!("F={f}: {e}"));
        assert!(col.converged, "F={f}: residual {} after {} iterations", col.residual_norm, col.iterations);
    }
}

#[test]
fn cg_multi_matches_dense_cholesky_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..50 {
        let f = 1 + trial % 50;
        let n = 1 + (trial * 7) % 60;
        let (x, xd) = sparse_and_dense(n, f, 0.15, &mut rng);
        let lambda = 0.5 + trial as f64 * 0.1;
        let d = 1 + trial % 4;
        let rhs = DenseMatrix::from_fn(f, d, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let settings = CgSettings { rel_tolerance: 1e-12, abs_tolerance: 1e-300, max_iterations: Some(10 * f + 10) };
        let op = RidgeGramOperator::new(&x, lambda).unwrap();
        let got = to_na(&cg_solve_multi(&op, &rhs, &settings).unwrap());
        let k = xd.transpose() * &xd + DMatrix::identity(f, f) * lambda;
        let want = k.cholesky().unwrap().solve(&to_na(&rhs));
        for c in 0..d {
            let err = (got.column(c) - want.column(c)).norm() / want.column(c).norm();
            assert!(err <= 1e-8, "trial {trial} column {c}: relative error {err}");
        }
    }
}

#[test]
fn cg_random_spd_five_by_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, xd) = sparse_and_dense(8, 5, 0.4, &mut rng);
    let op = RidgeGramOperator::new(&x, 1.0).unwrap();
    let b = vec![1.0, -2.0, 0.5, 3.0, -1.0];
    let settings = CgSettings { rel_tolerance: 1e-12, ..Default::default() };
    let got = cg_solve(&op, &b, &settings).unwrap().solution;
    let k = xd.transpose() * &xd + DMatrix::identity(5, 5);
    let want = k.cholesky().unwrap().solve(&DVector::from_vec(b));
    let err = (DVector::from_vec(got) - &want).norm() / want.norm();
    assert!(err <= 1e-8, "{err}");
}
