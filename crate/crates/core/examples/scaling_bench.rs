//! Time block multiplication and matvec across worker counts and print one
//! JSON line per stage, ready for plotting.
//!
//! `cargo run --release --example scaling_bench -- 1000`

use densecad::blockstore::Scratch;
use densecad::pipeline::{self, BenchOptions};

fn main() -> densecad::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let opts = BenchOptions {
        nodes: vec![n],
        workers: vec![1, 2, 4, 8],
        block_sizes: vec![None, Some(n / 4)],
        repeats: 1,
        seed: 0,
    };
    pipeline::bench(&scratch, &opts, |rec| {
        println!("{}", serde_json::to_string(rec).expect("record serializes"));
    })?;
    Ok(())
}
