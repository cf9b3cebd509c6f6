//! Draw a synthetic snapshot pair with planted inter-cluster anomalies.

use densecad::blockstore::Scratch;
use densecad::pipeline;
use densecad::runtime::Pool;
use densecad::synthgen::SyntheticSpec;

fn main() -> densecad::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let pool = Pool::new(1)?;

    for flip_prob in [0.0, 1e-3, 0.05] {
        let spec = SyntheticSpec { flip_prob, ..SyntheticSpec::new(400, 7) };
        let name = format!("flip-{flip_prob}");
        let out = pipeline::gen(&pool, &scratch, &spec, &name)?;
        let truth = pipeline::load_truth(&scratch, &name)?;
        let sizes: Vec<usize> = (0..4).map(|c| truth.clusters.iter().filter(|&&k| k == c).count()).collect();
        println!(
            "flip {flip_prob}: cluster sizes {sizes:?}, {} planted edges touching {} nodes, identical {}",
            out.anomalous_edges, out.anomalous_nodes, truth.identical
        );
    }
    Ok(())
}
