use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use densecad::anomaly::SkipRule;
use densecad::blockstore::Scratch;
use densecad::config::{RunConfig, SCRATCH_ENV};
use densecad::pipeline::{self, BenchOptions, VerifyOptions};
use densecad::runtime::Pool;
use densecad::sdd::ChainForm;
use densecad::synthgen::{default_block_size, SyntheticSpec};

/// Out-of-core commute-time anomaly detection between two graph snapshots.
#[derive(Debug, Parser)]
#[command(name = "densecad", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Args)]
struct Store {
    /// Root directory holding every matrix.
    #[arg(long, env = SCRATCH_ENV)]
    scratch: PathBuf,
    /// Append one JSON line of stage metrics per stage to this file.
    #[arg(long)]
    run_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Workers {
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct Solver {
    /// Projection accuracy; sets the embedding width ceil(ln(n/eps)).
    #[arg(long, default_value_t = RunConfig::DEFAULT_EPS)]
    eps: f64,
    /// Solver accuracy; sets ceil(ln(1/delta)) Richardson steps.
    #[arg(long, default_value_t = RunConfig::DEFAULT_DELTA)]
    delta: f64,
    /// Chain length.
    #[arg(long, default_value_t = RunConfig::DEFAULT_D)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `halved` or `product`.
    #[arg(long, default_value = "halved")]
    chain_form: ChainForm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic graph pair with planted anomalies.
    Gen {
        #[command(flatten)]
        store: Store,
        #[command(flatten)]
        workers: Workers,
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        flip_prob: f64,
        /// Perturbation applied to the points of the second graph.
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long)]
        block_size: Option<usize>,
        /// Output prefix: writes `<name>/g1`, `<name>/g2`, `<name>/truth.json`.
        #[arg(long, default_value = "pair")]
        name: String,
    },
    /// Load a CSV edge list `i,j,weight` as a symmetric adjacency matrix.
    Ingest {
        #[command(flatten)]
        store: Store,
        #[command(flatten)]
        workers: Workers,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        block_size: Option<usize>,
        #[arg(long)]
        name: String,
    },
    /// Compute and store the commute-time embedding of a graph.
    Embed {
        #[command(flatten)]
        store: Store,
        #[command(flatten)]
        workers: Workers,
        #[arg(long)]
        graph: String,
        #[arg(long)]
        out: String,
        #[command(flatten)]
        solver: Solver,
        /// Force the embedding width instead of deriving it from --eps.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score two snapshots and write the anomaly report.
    Detect {
        #[command(flatten)]
        store: Store,
        #[command(flatten)]
        workers: Workers,
        #[arg(long)]
        g1: String,
        #[arg(long)]
        g2: String,
        #[arg(long)]
        z1: String,
        #[arg(long)]
        z2: String,
        #[arg(long, default_value_t = RunConfig::DEFAULT_TOP)]
        top: usize,
        /// Treat weight changes up to this size as no change.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Report path; defaults to `<scratch>/report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a graph's embedding with exact commute times.
    Verify {
        #[command(flatten)]
        store: Store,
        #[command(flatten)]
        workers: Workers,
        #[arg(long)]
        graph: String,
        #[command(flatten)]
        solver: Solver,
        /// Largest graph the dense reference accepts.
        #[arg(long, default_value_t = densecad::oracle::DEFAULT_CAP)]
        cap: usize,
        /// Projection accuracy of the in-memory baseline.
        #[arg(long, default_value_t = 1e-3)]
        baseline_eps: f64,
    },
    /// Time block multiplication and matvec across sizes and worker counts.
    Bench {
        #[command(flatten)]
        store: Store,
        #[arg(long, value_delimiter = ',', default_value = "2000")]
        nodes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
        /// Block sizes; empty picks ceil(sqrt(n)).
        #[arg(long, value_delimiter = ',')]
        block_size: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics file (JSON lines); defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open(store: &Store, workers: usize) -> Result<(Scratch, Pool)> {
    let scratch = Scratch::open(&store.scratch)?;
    let mut pool = Pool::new(workers)?;
    if let Some(log) = &store.run_log {
        pool = pool.with_run_log(log)?;
    }
    Ok((scratch, pool))
}

fn config(store: &Store, workers: usize, s: &Solver) -> RunConfig {
    RunConfig {
        workers,
        eps_rp: s.eps,
        delta: s.delta,
        d: s.d,
        seed: s.seed,
        form: s.chain_form,
        ..RunConfig::new(&store.scratch)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Gen {
            store,
            workers,
            nodes,
            seed,
            flip_prob,
            noise,
            block_size,
            name,
        } => {
            let (scratch, pool) = open(&store, workers.workers)?;
            let spec = SyntheticSpec {
                flip_prob,
                noise,
                block_size,
                ..SyntheticSpec::new(nodes, seed)
            };
            print_json(&pipeline::gen(&pool, &scratch, &spec, &name)?)
        }
        Command::Ingest {
            store,
            workers,
            edges,
            nodes,
            block_size,
            name,
        } => {
            let (scratch, pool) = open(&store, workers.workers)?;
            let p = block_size.unwrap_or_else(|| default_block_size(nodes));
            let h = pipeline::ingest_file(&pool, &scratch, &edges, nodes, p, &name)?;
            print_json(&serde_json::json!({ "matrix": h.meta.name, "path": h.root }))
        }
        Command::Embed {
            store,
            workers,
            graph,
            out,
            solver,
            k,
        } => {
            let (scratch, pool) = open(&store, workers.workers)?;
            let cfg = config(&store, workers.workers, &solver);
            let z = pipeline::embed(&pool, &scratch, &cfg, &graph, &out, k)?;
            print_json(&z.info)
        }
        Command::Detect {
            store,
            workers,
            g1,
            g2,
            z1,
            z2,
            top,
            tolerance,
            out,
        } => {
            let (scratch, pool) = open(&store, workers.workers)?;
            let skip = tolerance.map_or(SkipRule::Exact, SkipRule::Tolerance);
            let det = pipeline::detect(&pool, &scratch, &g1, &g2, &z1, &z2, top, skip)?;
            let path = out.unwrap_or_else(|| store.scratch.join("report.json"));
            write_file(&path, det.report.to_json()?.as_bytes())?;
            print_json(&serde_json::json!({ "report": path, "nodes": det.report.nodes.len() }))
        }
        Command::Verify {
            store,
            workers,
            graph,
            solver,
            cap,
            baseline_eps,
        } => {
            let (scratch, pool) = open(&store, workers.workers)?;
            let cfg = config(&store, workers.workers, &solver);
            let opts = VerifyOptions { cap, baseline_eps };
            let r = pipeline::verify(&pool, &scratch, &cfg, &graph, opts)?;
            print_json(&r)?;
            eprintln!(
                "relative error {:+.4} (mean |dc| {:.6e} vs baseline {:.6e})",
                r.relative_error, r.error, r.baseline_error
            );
            Ok(())
        }
        Command::Bench {
            store,
            nodes,
            workers,
            block_size,
            repeats,
            seed,
            out,
        } => {
            let scratch = Scratch::open(&store.scratch)?;
            let block_sizes = if block_size.is_empty() {
                vec![None]
            } else {
                block_size.into_iter().map(Some).collect()
            };
            let opts = BenchOptions {
                nodes,
                workers,
                block_sizes,
                repeats,
                seed,
            };
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(std::io::stdout()),
            };
            let mut failed = None;
            pipeline::bench(&scratch, &opts, |rec| {
                if failed.is_none() {
                    if let Err(e) = serde_json::to_string(rec)
                        .map_err(anyhow::Error::from)
                        .and_then(|s| writeln!(sink, "{s}").map_err(anyhow::Error::from))
                    {
                        failed = Some(e);
                    }
                }
            })?;
            failed.map_or(Ok(()), Err)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
