mod common;

use common::*;
use densecad::blockops::{self, DenseVector, Panel};
use densecad::blockstore::read_dense;
use densecad::oracle::{self, DenseMatrix};
use densecad::sdd::{self, ChainForm, LinearOperator, ReferenceSolver, SddDecomposition};
use nalgebra::DMatrix;

const FORMS: [ChainForm; 2] = [ChainForm::Halved, ChainForm::Product];

fn residual(m: &DenseMatrix, y: &[f64], b: &[f64]) -> f64 {
    m.mul_vec(y).iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn solver_variants_agree() {
    for form in FORMS {
        for t in 0..20u64 {
            let mut r = rng(100 + t);
            let n = 2 + (t as usize * 3) % 63;
            let p = 1 + (t as usize * 5) % 17;
            let vals = strictly_dominant(&mut r, n);
            let b = random_values(&mut r, n);
            let (_d, scratch, pool) = setup(2);
            let m = store(&scratch, "m", n, p, &vals, true);
            let pc = sdd::chain_product(&pool, &scratch, &m, 3, form, "chain").unwrap();
            let est = pc.estimate_solution(&pool, &DenseVector(b.clone()), 5e-5).unwrap();

            let (p1, p2) = pc.operators(&pool);
            let q = sdd::richardson_steps(5e-5).unwrap();
            let bp = Panel::from_column(&b);
            let fast2 = sdd::exact_solve_fast2(&p1, &p2, &bp, q).unwrap();
            assert_eq!(&est.0[..], fast2.data(), "fast2 differs bitwise");

            let dec = SddDecomposition::from_matrix(&pool, &scratch, &m).unwrap();
            let block_ref = sdd::block_reference_solver(&pool, &scratch, &dec, &m, 3, form).unwrap();
            let exact = block_ref.exact_solve(&bp, 5e-5).unwrap();

            let dm = dense(n, &vals);
            let adj = dense(n, &vals.iter().enumerate().map(|(i, &v)| if i % (n + 1) == 0 { 0.0 } else { -v }).collect::<Vec<_>>());
            let c = dec.dvec.inv_sqrt();
            let dense_ref = ReferenceSolver::new(&dec.dvec, adj.diag_scale(&c, &c), dm.clone(), 3, form).unwrap();
            let exact_dense = dense_ref.exact_solve(&bp, 5e-5).unwrap();

            let scale = max_abs(&est).max(1e-300);
            for (name, other) in [("exact_solve", exact.data()), ("dense exact_solve", exact_dense.data())] {
                let diff = est.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff <= 1e-10 * scale, "{form:?} system {t}: {name} off by {diff:e}");
            }
            // Weak dominance slows convergence, but the residual always shrinks.
            let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(residual(&dm, &est, &b) < bn, "{form:?} system {t} diverged");
        }
    }
}

#[test]
fn residual_is_non_increasing() {
    for form in FORMS {
        for d in [2, 3] {
            for t in 0..20u64 {
                let mut r = rng(300 + t);
                let n = 4 + (t as usize * 7) % 61;
                let vals = strictly_dominant(&mut r, n);
                let b = random_values(&mut r, n);
                let (_d, scratch, pool) = setup(1);
                let m = store(&scratch, "m", n, 8, &vals, true);
                let pc = sdd::chain_product(&pool, &scratch, &m, d, form, "chain").unwrap();
                let (p1, p2) = pc.operators(&pool);
                let dm = dense(n, &vals);
                let bp = Panel::from_column(&b);
                let mut last = f64::INFINITY;
                for q in 2..=12 {
                    let y = sdd::exact_solve_fast(&p1, &p2, &bp, q).unwrap();
                    let res = residual(&dm, y.data(), &b);
                    assert!(res <= last * (1.0 + 1e-12) + 1e-14, "{form:?} d={d} system {t} step {q}: {res} > {last}");
                    last = res;
                }
            }
        }
    }
}

#[test]
fn longer_chains_leave_smaller_residuals() {
    for form in FORMS {
        for t in 0..10u64 {
            let mut r = rng(500 + t);
            let n = 30;
            let vals = strictly_dominant(&mut r, n);
            let b = random_values(&mut r, n);
            let dm = dense(n, &vals);
            let mut last = f64::INFINITY;
            for d in 1..=4 {
                let (_d, scratch, pool) = setup(1);
                let m = store(&scratch, "m", n, 7, &vals, true);
                let pc = sdd::chain_product(&pool, &scratch, &m, d, form, "c").unwrap();
                let (p1, p2) = pc.operators(&pool);
                let y = sdd::exact_solve_fast(&p1, &p2, &Panel::from_column(&b), 3).unwrap();
                let res = residual(&dm, y.data(), &b);
                assert!(res <= last + 1e-12, "{form:?} system {t}: d={d} residual {res} > {last}");
                last = res;
            }
        }
    }
}

#[test]
fn second_preconditioner_is_first_times_system() {
    for form in FORMS {
        for t in 0..5u64 {
            let mut r = rng(700 + t);
            let n = 40;
            let vals = strictly_dominant(&mut r, n);
            let (_d, scratch, pool) = setup(2);
            let m = store(&scratch, "m", n, 9, &vals, true);
            let pc = sdd::chain_product(&pool, &scratch, &m, 3, form, "c").unwrap();
            let p1 = read_dense(&pc.p1).unwrap();
            let p2 = read_dense(&pc.p2).unwrap();
            let want = oracle::dense_multiply(&p1, &vals, n, n, n);
            let scale = max_abs(&want);
            let diff = p2.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-10 * scale, "{form:?}: {diff:e}");
        }
    }
}

/// `A_0 = A`, `A_{k+1} = A_k D^{-1} A_k`.
#[test]
fn normalized_powers_match_the_recursive_chain() {
    for t in 0..5u64 {
        let mut r = rng(900 + t);
        let n = 24 + t as usize * 9;
        let vals = strictly_dominant(&mut r, n);
        let (_d, scratch, pool) = setup(2);
        let m = store(&scratch, "m", n, 10, &vals, true);
        let dec = SddDecomposition::from_matrix(&pool, &scratch, &m).unwrap();
        let dvec = dec.dvec.0.clone();
        let mut ak = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { -vals[i * n + j] });
        let dinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, dvec.iter().map(|d| 1.0 / d)));
        let c = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, dvec.iter().map(|d| d.powf(-0.5))));
        let mut s = dec.normalized(&pool, &scratch).unwrap();
        for k in 0..=3 {
            if k > 0 {
                s = blockops::multiply(&pool, &scratch, &s, &s, &format!("s{k}")).unwrap();
                ak = &ak * &dinv * &ak;
            }
            let want = &c * &ak * &c;
            let got = read_dense(&s).unwrap();
            let scale = want.amax();
            let diff = (0..n * n).map(|i| (got[i] - want[(i / n, i % n)]).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-10 * scale.max(1e-300), "k = {k}: {diff:e}");
        }
    }
}

#[test]
fn triangle_laplacian_solves_to_one_percent() {
    let n = 3;
    let l = [2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0];
    let b = [1.0, -1.0, 0.0];
    for form in FORMS {
        let (_d, scratch, pool) = setup(1);
        let m = store(&scratch, "m", n, 2, &l, true);
        let pc = sdd::chain_product(&pool, &scratch, &m, 3, form, "c").unwrap();
        let y = pc.estimate_solution(&pool, &DenseVector(b.to_vec()), 1e-3).unwrap();
        let res = residual(&dense(n, &l), &y, &b);
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res / bn <= 0.01, "{form:?}: residual {res}");
    }
}

#[test]
fn dense_and_block_crude_solves_agree() {
    let mut r = rng(42);
    let n = 33;
    let vals = strictly_dominant(&mut r, n);
    let (_d, scratch, pool) = setup(3);
    let m = store(&scratch, "m", n, 6, &vals, true);
    let dec = SddDecomposition::from_matrix(&pool, &scratch, &m).unwrap();
    let c = dec.dvec.inv_sqrt();
    let adj = dense(n, &read_dense(&dec.a).unwrap());
    let x = Panel::from_vec(n, 4, random_values(&mut r, n * 4)).unwrap();
    for form in FORMS {
        let block = sdd::block_reference_solver(&pool, &scratch, &dec, &m, 3, form).unwrap();
        let dense_solver = ReferenceSolver::new(&dec.dvec, adj.diag_scale(&c, &c), dense(n, &vals), 3, form).unwrap();
        assert_eq!(dense_solver.s.dim(), n);
        let u = block.crude_solve(&x).unwrap();
        let v = dense_solver.crude_solve(&x).unwrap();
        assert!(max_rel(u.data(), v.data(), max_abs(v.data())) < 1e-12);
    }
}
