mod common;

use common::*;
use densecad::oracle::{self, DenseMatrix};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pseudoinverse_reproduces_the_laplacian(n in 2usize..200, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = dense(n, &random_graph(&mut r, n, 0.1));
        let l = a.laplacian();
        let lp = l.pseudoinverse();
        let back = l.as_nalgebra() * lp.as_nalgebra() * l.as_nalgebra();
        let rel = (back - l.as_nalgebra()).norm() / l.as_nalgebra().norm();
        prop_assert!(rel <= 1e-8, "{rel:e}");
    }

    #[test]
    fn commute_times_form_a_metric_under_square_root(n in 2usize..60, seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = oracle::exact_commute_times(&dense(n, &random_graph(&mut r, n, 0.2)));
        for i in 0..n {
            prop_assert_eq!(c.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(c.get(i, j), c.get(j, i));
                prop_assert!(c.get(i, j) >= 0.0);
                for k in 0..n {
                    let (ij, ik, kj) = (c.get(i, j).sqrt(), c.get(i, k).sqrt(), c.get(k, j).sqrt());
                    prop_assert!(ij <= ik + kj + 1e-9 * (1.0 + ij));
                }
            }
        }
    }
}

#[test]
fn series_resistances_add() {
    // Path with weights 1, 2, 4: R(0,3) = 1 + 1/2 + 1/4.
    let mut g = vec![0.0; 16];
    for (i, w) in [1.0, 2.0, 4.0].into_iter().enumerate() {
        g[i * 4 + i + 1] = w;
        g[(i + 1) * 4 + i] = w;
    }
    let r = oracle::effective_resistances(&dense(4, &g));
    assert!((r.get(0, 3) - 1.75).abs() < 1e-12);
    let c = oracle::exact_commute_times(&dense(4, &g));
    assert!((c.get(0, 3) - 14.0 * 1.75).abs() < 1e-10);
}

#[test]
fn oversized_input_is_refused() {
    assert!(DenseMatrix::from_row_major(5, &[0.0; 25], 4).is_err());
}
