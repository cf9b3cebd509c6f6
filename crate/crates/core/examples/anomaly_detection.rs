//! End to end: generate two snapshots, embed both, rank nodes by how much
//! their commute times moved where edges changed.

use std::collections::HashSet;

use densecad::anomaly::SkipRule;
use densecad::blockstore::Scratch;
use densecad::config::RunConfig;
use densecad::pipeline;
use densecad::runtime::Pool;
use densecad::synthgen::SyntheticSpec;

fn main() -> densecad::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let cfg = RunConfig { workers: 2, ..RunConfig::new(dir.path()) };
    let pool = Pool::new(cfg.workers)?;

    let spec = SyntheticSpec { flip_prob: 2e-3, ..SyntheticSpec::new(300, 3) };
    let g = pipeline::gen(&pool, &scratch, &spec, "pair")?;
    pipeline::embed(&pool, &scratch, &cfg, &g.g1, "z1", None)?;
    pipeline::embed(&pool, &scratch, &cfg, &g.g2, "z2", None)?;
    let det = pipeline::detect(&pool, &scratch, &g.g1, &g.g2, "z1", "z2", 10, SkipRule::Exact)?;

    let planted: HashSet<usize> = pipeline::load_truth(&scratch, "pair")?.anomalous_nodes.into_iter().collect();
    println!("{} planted nodes", planted.len());
    for n in &det.report.nodes {
        let mark = if planted.contains(&n.id) { "planted" } else { "" };
        println!("#{:<2} node {:>3}  score {:>10.4}  {mark}", n.rank, n.id, n.score);
    }
    for e in det.report.edges.iter().take(3) {
        println!("edge ({}, {}) dE {:.4}", e.i, e.j, e.delta_e);
    }
    Ok(())
}
