//! Embed a small kernel graph so squared row distances approximate
//! effective resistances, then compare with the exact values.

use densecad::blockstore::Scratch;
use densecad::embedding::{self, EmbeddingParams};
use densecad::oracle::{self, DenseMatrix};
use densecad::runtime::Pool;
use densecad::sdd::ChainForm;
use densecad::synthgen::kernel_graph;

fn main() -> densecad::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let pool = Pool::new(2)?;

    let points: Vec<Vec<f64>> = (0..150)
        .map(|i| {
            let t = i as f64 * 0.21;
            vec![t.cos() * (1.0 + 0.1 * t), t.sin() * (1.0 + 0.1 * t)]
        })
        .collect();
    let a = kernel_graph(&pool, &scratch, &points, 0.5, 25, "spiral")?;
    let exact = oracle::effective_resistances(&DenseMatrix::from_handle(&a, 4096)?);

    for k in [None, Some(64), Some(256)] {
        let params = EmbeddingParams {
            eps_rp: 1e-3,
            delta: 1e-3,
            d: 3,
            seed: 1,
            form: ChainForm::Halved,
            k_override: k,
        };
        let z = embedding::commute_time_embedding(&pool, &scratch, &a, &params, "z")?;
        let approx = oracle::embedding_distances(&z.z, 1.0);
        println!(
            "k = {:>3}: mean relative resistance error {:.3}, R(0, 149) exact {:.4} approx {:.4}",
            z.info.k_rp,
            oracle::mean_relative_deviation(&approx, &exact),
            exact.get(0, 149),
            z.distance(0, 149)
        );
        std::fs::remove_dir_all(scratch.root().join("z")).ok();
    }
    Ok(())
}
