mod common;

use common::*;
use densecad::blockops::{self, DenseVector, DiagonalMatrix, ElementwiseOp, Panel};
use densecad::blockstore::read_dense;
use densecad::oracle::dense_multiply;
use proptest::prelude::*;

const TOL: f64 = 1e-12;

/// Entrywise bound scaled by `sum_k |a_ik| |b_kj|`, the natural size of a
/// dot product's rounding error.
fn check_product(n: usize, a: &[f64], b: &[f64], got: &[f64]) {
    let want = dense_multiply(a, b, n, n, n);
    let abs_a: Vec<f64> = a.iter().map(|v| v.abs()).collect();
    let abs_b: Vec<f64> = b.iter().map(|v| v.abs()).collect();
    let scale = dense_multiply(&abs_a, &abs_b, n, n, n);
    for i in 0..n * n {
        assert!(
            (got[i] - want[i]).abs() <= TOL * scale[i].max(f64::MIN_POSITIVE),
            "entry {i}: {} vs {}",
            got[i],
            want[i]
        );
    }
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![
        (1usize..=24).prop_flat_map(|n| (Just(n), prop_oneof![Just(1), Just(7), Just(16), Just(n)])),
        (25usize..=256).prop_flat_map(|n| (Just(n), prop_oneof![Just(7), Just(16), Just(n)])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn multiply_matches_dense((n, p) in sizes(), seed in any::<u64>()) {
        let (_d, scratch, pool) = setup(2);
        let mut r = rng(seed);
        let (a, b) = (random_values(&mut r, n * n), random_values(&mut r, n * n));
        let ha = store(&scratch, "a", n, p, &a, false);
        let hb = store(&scratch, "b", n, p, &b, false);
        let c = blockops::multiply(&pool, &scratch, &ha, &hb, "c").unwrap();
        check_product(n, &a, &b, &read_dense(&c).unwrap());
    }

    #[test]
    fn matvec_and_elementwise_match_dense((n, p) in sizes(), seed in any::<u64>()) {
        let (_d, scratch, pool) = setup(3);
        let mut r = rng(seed);
        let (a, b) = (random_values(&mut r, n * n), random_values(&mut r, n * n));
        let x = random_values(&mut r, n);
        let ha = store(&scratch, "a", n, p, &a, false);
        let hb = store(&scratch, "b", n, p, &b, false);
        let y = blockops::matvec(&pool, &ha, &DenseVector(x.clone())).unwrap();
        let want = dense_multiply(&a, &x, n, n, 1);
        let abs_a: Vec<f64> = a.iter().map(|v| v.abs()).collect();
        let abs_x: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        let scale = dense_multiply(&abs_a, &abs_x, n, n, 1);
        for i in 0..n {
            prop_assert!((y[i] - want[i]).abs() <= TOL * scale[i].max(f64::MIN_POSITIVE));
        }
        for (op, f) in [
            (ElementwiseOp::Add, (|u, v| u + v) as fn(f64, f64) -> f64),
            (ElementwiseOp::Sub, |u, v| u - v),
            (ElementwiseOp::AbsSub, |u: f64, v: f64| (u - v).abs()),
            (ElementwiseOp::Hadamard, |u, v| u * v),
        ] {
            let name = format!("{op:?}");
            let c = blockops::elementwise(&pool, &scratch, &ha, &hb, op, &name).unwrap();
            let want: Vec<f64> = a.iter().zip(&b).map(|(&u, &v)| f(u, v)).collect();
            prop_assert!(max_rel(&read_dense(&c).unwrap(), &want, f64::MIN_POSITIVE) <= TOL);
        }
    }

    #[test]
    fn scaling_and_lincomb_match_dense((n, p) in sizes(), seed in any::<u64>()) {
        let (_d, scratch, pool) = setup(1);
        let mut r = rng(seed);
        let (a, b) = (random_values(&mut r, n * n), random_values(&mut r, n * n));
        let dl = DiagonalMatrix(random_values(&mut r, n));
        let dr = DiagonalMatrix(random_values(&mut r, n));
        let ha = store(&scratch, "a", n, p, &a, false);
        let hb = store(&scratch, "b", n, p, &b, false);
        let s = blockops::diag_scale(&pool, &scratch, &ha, &dl, &dr, "s").unwrap();
        let want: Vec<f64> = (0..n * n).map(|t| dl.0[t / n] * a[t] * dr.0[t % n]).collect();
        prop_assert!(max_rel(&read_dense(&s).unwrap(), &want, f64::MIN_POSITIVE) <= TOL);
        let l = blockops::lincomb(&pool, &scratch, &[(2.0, &ha), (-0.5, &hb)], 3.0, "l").unwrap();
        let want: Vec<f64> = (0..n * n)
            .map(|t| 2.0 * a[t] + -0.5 * b[t] + if t / n == t % n { 3.0 } else { 0.0 })
            .collect();
        let got = read_dense(&l).unwrap();
        for t in 0..n * n {
            let scale = 2.0 * a[t].abs() + 0.5 * b[t].abs() + 3.0;
            prop_assert!((got[t] - want[t]).abs() <= TOL * scale);
        }
    }

    #[test]
    fn panel_product_is_block_size_independent(n in 2usize..80, p1 in 1usize..20, p2 in 1usize..20, seed in any::<u64>()) {
        let (_d, scratch, pool) = setup(2);
        let mut r = rng(seed);
        let a = random_values(&mut r, n * n);
        let x = Panel::from_vec(n, 3, random_values(&mut r, n * 3)).unwrap();
        let y1 = blockops::matmul_panel(&pool, &store(&scratch, "a1", n, p1, &a, false), &x).unwrap();
        let y2 = blockops::matmul_panel(&pool, &store(&scratch, "a2", n, p2, &a, false), &x).unwrap();
        // Each row is summed left to right in both tilings.
        prop_assert_eq!(y1.data(), y2.data());
    }
}

#[test]
fn matvec_is_bit_identical_across_workers() {
    let mut r = rng(5);
    let n = 97;
    let a = random_values(&mut r, n * n);
    let x = DenseVector(random_values(&mut r, n));
    let mut outs = Vec::new();
    for s in [1, 2, 4, 8] {
        let (_d, scratch, pool) = setup(s);
        let h = store(&scratch, "a", n, 10, &a, false);
        outs.push(blockops::matvec(&pool, &h, &x).unwrap());
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn multiply_io_is_shuffle_free() {
    for beta in [4usize, 10] {
        let (_d, scratch, pool) = setup(2);
        let (n, p) = (beta * 5, 5);
        let mut r = rng(beta as u64);
        let a = store(&scratch, "a", n, p, &random_values(&mut r, n * n), false);
        let b = store(&scratch, "b", n, p, &random_values(&mut r, n * n), false);
        let before = pool.history_len();
        let c = blockops::multiply(&pool, &scratch, &a, &b, "c").unwrap();
        let m = pool.history_since(before).pop().unwrap();
        let beta = beta as u64;
        assert_eq!(m.blocks_written, beta * beta);
        assert_eq!(m.blocks_read, 2 * beta * beta * beta);
        assert_eq!(m.bytes_written, c.meta.byte_size());
        assert_eq!(m.bytes_read, 2 * beta * c.meta.byte_size());
    }
}

#[test]
fn ragged_multiply_counts_reads_per_block() {
    let (_d, scratch, pool) = setup(1);
    let n = 23;
    let mut r = rng(1);
    let a = random_values(&mut r, n * n);
    let h = store(&scratch, "a", n, 7, &a, false);
    let before = pool.history_len();
    let c = blockops::multiply(&pool, &scratch, &h, &h, "c").unwrap();
    let m = pool.history_since(before).pop().unwrap();
    assert_eq!(m.blocks_written, 16);
    assert_eq!(m.blocks_read, 128);
    assert_eq!(m.bytes_written, (n * n * 8) as u64);
    check_product(n, &a, &a, &read_dense(&c).unwrap());
}
