//! Solve a diagonally dominant system with the precomputed inverse chain
//! and compare against the unprecomputed reference path and a dense solve.

use densecad::blockops::{DenseVector, Panel};
use densecad::blockstore::{write_dense, MatrixMeta, Scratch};
use densecad::oracle::{self, DenseMatrix};
use densecad::runtime::Pool;
use densecad::sdd::{self, ChainForm, SddDecomposition};

fn main() -> densecad::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let pool = Pool::new(2)?;

    // A weighted ring of 40 nodes plus a little extra on the diagonal.
    let n = 40;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        let j = (i + 1) % n;
        let w = 1.0 + (i % 3) as f64;
        m[i * n + j] -= w;
        m[j * n + i] -= w;
        m[i * n + i] += w;
        m[j * n + j] += w;
    }
    for i in 0..n {
        m[i * n + i] += 0.1;
    }
    let h = write_dense(scratch.root(), MatrixMeta::square("m", n, 8, true)?, &m)?;
    let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();

    let truth = oracle::exact_solve(&DenseMatrix::from_row_major(n, &m, n)?, &b)?;
    for form in [ChainForm::Halved, ChainForm::Product] {
        let chain = sdd::chain_product(&pool, &scratch, &h, 3, form, &format!("chain-{form:?}"))?;
        let dec = SddDecomposition::from_matrix(&pool, &scratch, &h)?;
        let reference = sdd::block_reference_solver(&pool, &scratch, &dec, &h, 3, form)?;
        for delta in [0.1, 1e-2, 1e-4] {
            let y = chain.estimate_solution(&pool, &DenseVector(b.clone()), delta)?;
            let r = reference.exact_solve(&Panel::from_column(&b), delta)?;
            let err = y.iter().zip(&truth).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            let gap = y.iter().zip(r.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            println!(
                "{form:?} delta {delta:e}: {} steps, max error {err:.3e}, precomputed vs reference {gap:.1e}",
                sdd::richardson_steps(delta)?
            );
        }
    }
    Ok(())
}
