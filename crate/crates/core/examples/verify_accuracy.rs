//! Compare the out-of-core embedding with exact commute times and with an
//! in-memory baseline, for two projection accuracies.
//!
//! `cargo run --release --example verify_accuracy -- 1000`

use densecad::blockstore::Scratch;
use densecad::config::RunConfig;
use densecad::pipeline::{self, VerifyOptions};
use densecad::runtime::Pool;
use densecad::synthgen::SyntheticSpec;

fn main() -> densecad::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let pool = Pool::new(1)?;
    let g = pipeline::gen(&pool, &scratch, &SyntheticSpec::new(n, 0), "pair")?;

    for eps in [1e-2, 1e-3] {
        let cfg = RunConfig { eps_rp: eps, ..RunConfig::new(dir.path()) };
        let r = pipeline::verify(&pool, &scratch, &cfg, &g.g1, VerifyOptions::default())?;
        println!(
            "eps {eps:e}: k {} vs baseline k {}, relative error {:+.2}%, mean relative deviation {:.1}%",
            r.k_rp,
            r.baseline_k_rp,
            100.0 * r.relative_error,
            100.0 * r.mean_relative_deviation
        );
    }
    Ok(())
}
