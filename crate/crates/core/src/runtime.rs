//! Fixed-size worker pool executing barrier-separated stages of per-block
//! tasks, with exact I/O accounting.
//!
//! A stage is a set of distinct task keys. Workers pull keys from a shared
//! queue in canonical (sorted) order; `run_stage` returns only after every
//! task has finished, so a later stage never observes a half-written
//! predecessor. The first failing task aborts the stage.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blockstore::{self, Block, BlockId, MatrixHandle};
use crate::error::{Error, Result};

/// Sorts task keys into the canonical order and rejects duplicates.
pub fn deterministic_order<K: Ord + Debug>(stage: &str, mut keys: Vec<K>) -> Result<Vec<K>> {
    keys.sort();
    if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateTask {
            stage: stage.to_string(),
            key: format!("{:?}", w[0]),
        });
    }
    Ok(keys)
}

#[derive(Debug, Clone)]
pub struct TaskSet<K> {
    stage: String,
    keys: Vec<K>,
}

impl<K: Ord + Debug> TaskSet<K> {
    pub fn new(stage: impl Into<String>, keys: Vec<K>) -> Result<Self> {
        let stage = stage.into();
        let keys = deterministic_order(&stage, keys)?;
        Ok(TaskSet { stage, keys })
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    pub fn keys(&self) -> &[K] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl TaskSet<BlockId> {
    pub fn blocks(stage: impl Into<String>, h: &MatrixHandle) -> Self {
        TaskSet {
            stage: stage.into(),
            keys: h.meta.block_ids(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub tasks: u64,
    pub blocks_read: u64,
    pub blocks_written: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub wall_time: f64,
    pub workers: usize,
}

#[derive(Debug, Default)]
struct Counters {
    blocks_read: AtomicU64,
    blocks_written: AtomicU64,
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
}

/// Handed to every task; all block I/O inside a stage goes through it so the
/// stage metrics stay exact.
#[derive(Debug)]
pub struct TaskCtx<'a> {
    counters: &'a Counters,
}

impl TaskCtx<'_> {
    pub fn read(&self, h: &MatrixHandle, id: BlockId) -> Result<Block> {
        let b = blockstore::read_block(h, id)?;
        self.counters.blocks_read.fetch_add(1, Ordering::Relaxed);
        self.counters
            .bytes_read
            .fetch_add(b.payload_bytes(), Ordering::Relaxed);
        Ok(b)
    }

    pub fn write(&self, h: &MatrixHandle, id: BlockId, b: &Block) -> Result<()> {
        blockstore::write_block(h, id, b)?;
        self.counters.blocks_written.fetch_add(1, Ordering::Relaxed);
        self.counters
            .bytes_written
            .fetch_add(b.payload_bytes(), Ordering::Relaxed);
        Ok(())
    }
}

pub struct Pool {
    workers: usize,
    log: Mutex<Option<BufWriter<File>>>,
    history: Mutex<Vec<StageMetrics>>,
}

impl Debug for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pool").field("workers", &self.workers).finish()
    }
}

impl Pool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        Ok(Pool {
            workers,
            log: Mutex::new(None),
            history: Mutex::new(Vec::new()),
        })
    }

    /// Appends one JSON object per completed stage to `path`.
    pub fn with_run_log(self, path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        *self.log.lock().unwrap() = Some(BufWriter::new(file));
        Ok(self)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Metrics of every stage run so far, in completion order.
    pub fn history(&self) -> Vec<StageMetrics> {
        self.history.lock().unwrap().clone()
    }

    pub fn history_len(&self) -> usize {
        self.history.lock().unwrap().len()
    }

    pub fn history_since(&self, mark: usize) -> Vec<StageMetrics> {
        self.history.lock().unwrap()[mark..].to_vec()
    }

    pub fn run_stage<K, R, F>(
        &self,
        tasks: TaskSet<K>,
        f: F,
    ) -> Result<(BTreeMap<K, R>, StageMetrics)>
    where
        K: Ord + Clone + Debug + Send + Sync,
        R: Send,
        F: Fn(&TaskCtx<'_>, &K) -> Result<R> + Sync,
    {
        let start = Instant::now();
        let counters = Counters::default();
        let keys = &tasks.keys;
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let failure: Mutex<Option<(usize, Error)>> = Mutex::new(None);

        let work = || {
            let ctx = TaskCtx {
                counters: &counters,
            };
            let mut done = Vec::new();
            while !abort.load(Ordering::Acquire) {
                let i = next.fetch_add(1, Ordering::AcqRel);
                if i >= keys.len() {
                    break;
                }
                match f(&ctx, &keys[i]) {
                    Ok(r) => done.push((i, r)),
                    Err(e) => {
                        abort.store(true, Ordering::Release);
                        let mut slot = failure.lock().unwrap();
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                        break;
                    }
                }
            }
            done
        };

        let threads = self.workers.min(keys.len()).max(1);
        let mut finished: Vec<(usize, R)> = if threads == 1 {
            work()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads).map(|_| s.spawn(&work)).collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("stage worker panicked"))
                    .collect()
            })
        };

        if let Some((i, e)) = failure.into_inner().unwrap() {
            return Err(Error::TaskFailed {
                stage: tasks.stage.clone(),
                key: format!("{:?}", keys[i]),
                source: Box::new(e),
            });
        }

        finished.sort_by_key(|(i, _)| *i);
        let results: BTreeMap<K, R> = finished
            .into_iter()
            .map(|(i, r)| (keys[i].clone(), r))
            .collect();

        let metrics = StageMetrics {
            stage: tasks.stage.clone(),
            tasks: keys.len() as u64,
            blocks_read: counters.blocks_read.into_inner(),
            blocks_written: counters.blocks_written.into_inner(),
            bytes_read: counters.bytes_read.into_inner(),
            bytes_written: counters.bytes_written.into_inner(),
            wall_time: start.elapsed().as_secs_f64(),
            workers: self.workers,
        };
        self.record(&metrics)?;
        Ok((results, metrics))
    }

    fn record(&self, m: &StageMetrics) -> Result<()> {
        if let Some(log) = self.log.lock().unwrap().as_mut() {
            let line = serde_json::to_string(m)?;
            writeln!(log, "{line}")
                .and_then(|_| log.flush())
                .map_err(|e| Error::io("run log", e))?;
        }
        self.history.lock().unwrap().push(m.clone());
        Ok(())
    }
}
