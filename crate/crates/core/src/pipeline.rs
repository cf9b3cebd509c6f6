//! The end-to-end commands: generate, ingest, embed, detect, verify, bench.
//!
//! Graphs, embeddings and chains are addressed by name relative to the store
//! root held by a [`Scratch`].

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anomaly::{self, Detection, GraphPair, SkipRule};
use crate::blockops;
use crate::blockstore::{self, MatrixHandle, MatrixMeta, Scratch};
use crate::config::RunConfig;
use crate::embedding::{self, Embedding};
use crate::error::{Error, Result};
use crate::ingest;
use crate::oracle::{self, DenseMatrix};
use crate::runtime::{Pool, StageMetrics};
use crate::synthgen::{self, GroundTruth, SyntheticSample, SyntheticSpec};

pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, Serialize)]
pub struct GenOutput {
    pub g1: String,
    pub g2: String,
    pub truth: PathBuf,
    pub anomalous_nodes: usize,
    pub anomalous_edges: usize,
}

/// Writes `<name>/g1`, `<name>/g2` and `<name>/truth.json`.
pub fn gen(pool: &Pool, scratch: &Scratch, spec: &SyntheticSpec, name: &str) -> Result<GenOutput> {
    let g1 = format!("{name}/g1");
    let g2 = format!("{name}/g2");
    let pair = synthgen::generate_pair(pool, scratch, spec, (&g1, &g2))?;
    let truth = scratch.root().join(name).join(TRUTH_FILE);
    pair.truth.save(&truth)?;
    Ok(GenOutput {
        g1,
        g2,
        truth,
        anomalous_nodes: pair.truth.anomalous_nodes.len(),
        anomalous_edges: pair.truth.anomalous_edges.len(),
    })
}

pub fn load_truth(scratch: &Scratch, name: &str) -> Result<GroundTruth> {
    GroundTruth::load(&scratch.root().join(name).join(TRUTH_FILE))
}

/// Reads a CSV edge list from `path` into a new matrix `name`.
pub fn ingest_file(
    pool: &Pool,
    scratch: &Scratch,
    path: &Path,
    n: usize,
    p: usize,
    name: &str,
) -> Result<MatrixHandle> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest::ingest(pool, scratch, BufReader::new(f), n, p, name)
}

/// Embeds stored graph `graph` and saves the result as `out`.
pub fn embed(
    pool: &Pool,
    scratch: &Scratch,
    cfg: &RunConfig,
    graph: &str,
    out: &str,
    k_override: Option<usize>,
) -> Result<Embedding> {
    cfg.validate()?;
    let a = scratch.open_matrix(graph)?;
    let params = embedding::EmbeddingParams {
        k_override,
        ..cfg.embedding_params()
    };
    let z = embedding::commute_time_embedding(pool, scratch, &a, &params, out)?;
    z.save(scratch.root(), out, a.meta.block_size)?;
    Ok(z)
}

/// Scores stored graphs `g1`, `g2` against saved embeddings `z1`, `z2`.
#[allow(clippy::too_many_arguments)]
pub fn detect(
    pool: &Pool,
    scratch: &Scratch,
    g1: &str,
    g2: &str,
    z1: &str,
    z2: &str,
    top: usize,
    skip: SkipRule,
) -> Result<Detection> {
    let gp = GraphPair::new(pool, scratch.open_matrix(g1)?, scratch.open_matrix(g2)?)?;
    let z1 = Embedding::load(scratch.root(), z1)?;
    let z2 = Embedding::load(scratch.root(), z2)?;
    anomaly::detect(pool, scratch, &gp, &z1, &z2, top, skip)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub cap: usize,
    /// Projection accuracy of the in-memory baseline.
    pub baseline_eps: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            cap: oracle::DEFAULT_CAP,
            baseline_eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub n: usize,
    pub k_rp: usize,
    pub baseline_k_rp: usize,
    pub components: usize,
    /// Mean absolute commute-time deviation from the exact values.
    pub error: f64,
    pub baseline_error: f64,
    /// `(error - baseline_error) / baseline_error`.
    pub relative_error: f64,
    /// Mean of `|c - c_exact| / c_exact` over pairs.
    pub mean_relative_deviation: f64,
    pub baseline_mean_relative_deviation: f64,
}

/// Seed offset that keeps the baseline's projections independent.
pub const BASELINE_SEED_OFFSET: u64 = 0x5BD1_E995;

/// Embeds `a` out of core and compares it, and an in-memory baseline,
/// with exact commute times.
pub fn verify_handle(
    pool: &Pool,
    scratch: &Scratch,
    cfg: &RunConfig,
    a: &MatrixHandle,
    opts: VerifyOptions,
) -> Result<VerifyReport> {
    cfg.validate()?;
    let n = a.meta.n_rows;
    if n > opts.cap {
        return Err(Error::Oversized { n, cap: opts.cap });
    }
    let dense = DenseMatrix::from_handle(a, opts.cap)?;
    let params = cfg.embedding_params();
    let tmp = scratch.fresh_name("verify");
    let z = embedding::commute_time_embedding(pool, scratch, a, &params, &tmp)?;
    let truth = oracle::exact_commute_times(&dense);
    let approx = oracle::embedding_distances(&z.z, z.info.volume);
    let baseline_k = embedding::k_rp(n as f64, opts.baseline_eps)?;
    let zb = oracle::baseline_embedding(
        &dense,
        baseline_k,
        cfg.seed.wrapping_add(BASELINE_SEED_OFFSET),
        cfg.delta,
        cfg.d,
        cfg.form,
    )?;
    let base = oracle::embedding_distances(&zb, dense.volume());
    let error = oracle::mean_abs_deviation(&approx, &truth);
    let baseline_error = oracle::mean_abs_deviation(&base, &truth);
    let _ = std::fs::remove_dir_all(scratch.root().join(&tmp));
    Ok(VerifyReport {
        n,
        k_rp: z.info.k_rp,
        baseline_k_rp: baseline_k,
        components: z.info.components,
        error,
        baseline_error,
        relative_error: oracle::relative_error(error, baseline_error)?,
        mean_relative_deviation: oracle::mean_relative_deviation(&approx, &truth),
        baseline_mean_relative_deviation: oracle::mean_relative_deviation(&base, &truth),
    })
}

pub fn verify(
    pool: &Pool,
    scratch: &Scratch,
    cfg: &RunConfig,
    graph: &str,
    opts: VerifyOptions,
) -> Result<VerifyReport> {
    verify_handle(pool, scratch, cfg, &scratch.open_matrix(graph)?, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub nodes: Vec<usize>,
    pub workers: Vec<usize>,
    /// `None` entries pick `ceil(sqrt(n))`.
    pub block_sizes: Vec<Option<usize>>,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub n: usize,
    pub block_size: usize,
    pub blocks_per_side: usize,
    pub repeat: usize,
    pub metrics: StageMetrics,
}

/// Times `A A` and `A x` on a synthetic graph for every `(n, p, S)`;
/// `sink` receives one record per stage.
pub fn bench(scratch: &Scratch, opts: &BenchOptions, mut sink: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    if opts.workers.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter("worker counts must be at least 1".into()));
    }
    let mut out = Vec::new();
    let setup = Pool::new(1)?;
    for &n in &opts.nodes {
        let sample = SyntheticSample::draw(&SyntheticSpec::new(n, opts.seed))?;
        for &p in &opts.block_sizes {
            let p = p.unwrap_or_else(|| synthgen::default_block_size(n));
            let meta = MatrixMeta::square(scratch.fresh_name("bench-a"), n, p, true)?;
            let a = blockops::from_fn(&setup, scratch, meta, |i, j| sample.weight1(i, j))?;
            let x = blockops::DenseVector((0..n).map(|i| (i as f64).sin()).collect());
            for &s in &opts.workers {
                let pool = Pool::new(s)?;
                for repeat in 0..opts.repeats.max(1) {
                    let mark = pool.history_len();
                    let c = blockops::multiply(&pool, scratch, &a, &a, &scratch.fresh_name("bench-c"))?;
                    blockops::matvec(&pool, &a, &x)?;
                    blockstore::remove_matrix(c)?;
                    for metrics in pool.history_since(mark) {
                        let rec = BenchRecord {
                            n,
                            block_size: p,
                            blocks_per_side: a.meta.block_rows,
                            repeat,
                            metrics,
                        };
                        sink(&rec);
                        out.push(rec);
                    }
                }
            }
            blockstore::remove_matrix(a)?;
        }
    }
    Ok(out)
}
