//! Edge and node anomaly scores between two snapshots of one graph.
//!
//! `dE(i,j) = |A1(i,j) - A2(i,j)| * |c1(i,j) - c2(i,j)|` where `c_t` is the
//! commute time in snapshot `t`. Node scores are the row sums of `dE`.
//! Commute times are only evaluated where the adjacency actually changed.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::blockops::{self, DenseVector};
use crate::blockstore::{Block, BlockId, MatrixHandle, Scratch};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::runtime::{Pool, TaskSet};

#[derive(Debug, Clone)]
pub struct GraphPair {
    pub a1: MatrixHandle,
    pub a2: MatrixHandle,
    pub v1: f64,
    pub v2: f64,
}

impl GraphPair {
    /// Checks both adjacency matrices and computes their volumes.
    pub fn new(pool: &Pool, a1: MatrixHandle, a2: MatrixHandle) -> Result<Self> {
        let (m1, m2) = (&a1.meta, &a2.meta);
        if m1.n_rows != m2.n_rows || m1.block_size != m2.block_size || m1.col_block_size != m2.col_block_size {
            return Err(Error::Dimension(format!(
                "`{}` ({} nodes, block {}) and `{}` ({} nodes, block {}) do not share a node set and tiling",
                m1.name, m1.n_rows, m1.block_size, m2.name, m2.n_rows, m2.block_size
            )));
        }
        blockops::check_adjacency(pool, &a1)?;
        blockops::check_adjacency(pool, &a2)?;
        let v1 = blockops::degrees(pool, &a1)?.trace();
        let v2 = blockops::degrees(pool, &a2)?.trace();
        Ok(GraphPair { a1, a2, v1, v2 })
    }

    pub fn n(&self) -> usize {
        self.a1.meta.n_rows
    }

    /// Refuses embeddings that were not built from these two graphs.
    pub fn check_provenance(&self, z1: &Embedding, z2: &Embedding) -> Result<()> {
        for (t, (a, v, z)) in [(&self.a1, self.v1, z1), (&self.a2, self.v2, z2)]
            .into_iter()
            .enumerate()
        {
            let i = t + 1;
            if z.info.source != a.meta.name {
                return Err(Error::Provenance(format!(
                    "embedding {i} was built from `{}`, not `{}`",
                    z.info.source, a.meta.name
                )));
            }
            if z.n() != a.meta.n_rows {
                return Err(Error::Provenance(format!(
                    "embedding {i} has {} rows for a {}-node graph",
                    z.n(),
                    a.meta.n_rows
                )));
            }
            if (z.info.volume - v).abs() > 1e-9 * v.abs().max(1.0) {
                return Err(Error::Provenance(format!(
                    "embedding {i} records volume {}, graph `{}` has {v}",
                    z.info.volume, a.meta.name
                )));
            }
        }
        Ok(())
    }
}

/// Which adjacency changes count as "unchanged" and are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum SkipRule {
    /// Skip exactly equal entries.
    #[default]
    Exact,
    /// Skip entries with `|A1 - A2| <= tol`; they score 0.
    Tolerance(f64),
    /// Evaluate every pair.
    Never,
}

/// One `dE` block. `z1`/`z2` must come from `gp.a1`/`gp.a2`.
pub fn delta_e_block(
    a1: &Block,
    a2: &Block,
    z1: &Embedding,
    z2: &Embedding,
    offsets: (usize, usize),
    skip: SkipRule,
) -> Block {
    let (r0, c0) = offsets;
    Block::from_fn(a1.rows(), a1.cols(), |r, c| {
        let da = (a1.get(r, c) - a2.get(r, c)).abs();
        let skipped = match skip {
            SkipRule::Exact => da == 0.0,
            SkipRule::Tolerance(tol) => da <= tol,
            SkipRule::Never => false,
        };
        if skipped {
            return 0.0;
        }
        let (i, j) = (r0 + r, c0 + c);
        da * (z1.commute_time(i, j) - z2.commute_time(i, j)).abs()
    })
}

/// Writes the full `dE` matrix as a new block matrix.
pub fn delta_e(
    pool: &Pool,
    scratch: &Scratch,
    gp: &GraphPair,
    z1: &Embedding,
    z2: &Embedding,
    skip: SkipRule,
    out_name: &str,
) -> Result<MatrixHandle> {
    gp.check_provenance(z1, z2)?;
    let mut meta = gp.a1.meta.clone();
    meta.name = out_name.to_string();
    meta.symmetric = true;
    let out = scratch.create(meta)?;
    let m = &gp.a1.meta;
    pool.run_stage(TaskSet::blocks("delta_e", &out), |ctx, id| {
        let x = ctx.read(&gp.a1, *id)?;
        let y = ctx.read(&gp.a2, *id)?;
        let offsets = (m.row_offset(id.row), m.col_offset(id.col));
        ctx.write(&out, *id, &delta_e_block(&x, &y, z1, z2, offsets, skip))
    })?;
    Ok(out)
}

/// `F_i = sum_j dE(i, j)`, reduced in canonical order.
pub fn node_scores(pool: &Pool, de: &MatrixHandle) -> Result<DenseVector> {
    blockops::row_sums(pool, de)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub id: usize,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub i: usize,
    pub j: usize,
    pub delta_e: f64,
}

fn by_score_then_index(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` highest scores, ties broken by lower index. Ranks start at 1.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<NodeScore>> {
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidParameter(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| by_score_then_index((scores[a], a), (scores[b], b)));
    Ok(idx
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, id)| NodeScore {
            id,
            score: scores[id],
            rank: r + 1,
        })
        .collect())
}

fn edge_order(a: &EdgeScore, b: &EdgeScore) -> Ordering {
    b.delta_e
        .total_cmp(&a.delta_e)
        .then(a.i.cmp(&b.i))
        .then(a.j.cmp(&b.j))
}

/// The `k` largest upper-triangle entries of `dE` (`i < j`), ties by `(i, j)`.
pub fn top_edges(pool: &Pool, de: &MatrixHandle, k: usize) -> Result<Vec<EdgeScore>> {
    let m = &de.meta;
    let keys: Vec<BlockId> = m.block_ids().into_iter().filter(|id| id.row <= id.col).collect();
    let (parts, _) = pool.run_stage(TaskSet::new("top_edges", keys)?, |ctx, id| {
        let blk = ctx.read(de, *id)?;
        let (r0, c0) = (m.row_offset(id.row), m.col_offset(id.col));
        let mut local = Vec::new();
        for r in 0..blk.rows() {
            for (c, &v) in blk.row(r).iter().enumerate() {
                let (i, j) = (r0 + r, c0 + c);
                if i < j {
                    local.push(EdgeScore { i, j, delta_e: v });
                }
            }
        }
        local.sort_by(edge_order);
        local.truncate(k);
        Ok(local)
    })?;
    let mut all: Vec<EdgeScore> = parts.into_values().flatten().collect();
    all.sort_by(edge_order);
    all.truncate(k);
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParameters {
    pub method: String,
    pub n: usize,
    pub top: usize,
    pub volumes: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub embeddings: Option<[crate::embedding::EmbeddingInfo; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skip: Option<SkipRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub parameters: ReportParameters,
    pub nodes: Vec<NodeScore>,
    pub edges: Vec<EdgeScore>,
}

impl AnomalyReport {
    pub fn node_ids(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores plus the ranked report.
#[derive(Debug, Clone)]
pub struct Detection {
    pub report: AnomalyReport,
    pub scores: DenseVector,
}

/// Scores a graph pair end to end. `dE` is written to scratch and removed.
pub fn detect(
    pool: &Pool,
    scratch: &Scratch,
    gp: &GraphPair,
    z1: &Embedding,
    z2: &Embedding,
    top: usize,
    skip: SkipRule,
) -> Result<Detection> {
    let de = delta_e(pool, scratch, gp, z1, z2, skip, &scratch.fresh_name("delta_e"))?;
    let scores = node_scores(pool, &de)?;
    let nodes = top_k(&scores, top)?;
    let edges = top_edges(pool, &de, top)?;
    crate::blockstore::remove_matrix(de)?;
    Ok(Detection {
        report: AnomalyReport {
            parameters: ReportParameters {
                method: "embedding".into(),
                n: gp.n(),
                top,
                volumes: [gp.v1, gp.v2],
                block_size: Some(gp.a1.meta.block_size),
                embeddings: Some([z1.info.clone(), z2.info.clone()]),
                skip: Some(skip),
            },
            nodes,
            edges,
        },
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_prefer_lower_index() {
        let top = top_k(&[1.0; 5], 3).unwrap();
        assert_eq!(top.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(top.iter().map(|n| n.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn full_ranking() {
        let s = [0.5, 3.0, 0.5, 2.0];
        let top = top_k(&s, 4).unwrap();
        assert_eq!(top.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 3, 0, 2]);
        assert!(top_k(&s, 0).is_err());
        assert!(top_k(&s, 5).is_err());
    }
}
