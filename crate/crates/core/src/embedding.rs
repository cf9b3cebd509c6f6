//! Commute-time embeddings by random projection.
//!
//! Each column of `Z` solves `L z = W^{1/2} B q` for a random sign vector `q`
//! over the edges. The incidence matrix `B` is never formed: the right-hand
//! side is accumulated straight from the upper triangle of the adjacency
//! blocks. Squared row distances of `Z` approximate effective resistances.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blockops::{self, DenseVector, DiagonalMatrix, Panel};
use crate::blockstore::{self, Block, BlockId, MatrixHandle, MatrixMeta, Scratch};
use crate::error::{Error, Result};
use crate::rng::EdgeProjectionSeed;
use crate::runtime::{Pool, TaskSet};
use crate::sdd::{self, ChainForm, ChainPreconditioner, SddDecomposition};

pub const EMBEDDING_FILE: &str = "embedding.json";

/// `ceil(ln(n / eps))`, at least 1.
pub fn k_rp(n: f64, eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) || !(n > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "projection size needs n > 1 and 0 < eps <= 1 (got n = {n}, eps = {eps})"
        )));
    }
    Ok(((n / eps).ln().ceil() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub eps_rp: f64,
    pub delta: f64,
    pub d: usize,
    pub seed: u64,
    #[serde(default)]
    pub form: ChainForm,
    /// Overrides the column count derived from `eps_rp`.
    #[serde(default)]
    pub k_override: Option<usize>,
}

impl EmbeddingParams {
    pub fn k_for(&self, n: usize) -> Result<usize> {
        match self.k_override {
            Some(0) => Err(Error::InvalidParameter("projection count must be positive".into())),
            Some(k) => Ok(k),
            None => k_rp(n as f64, self.eps_rp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingInfo {
    pub source: String,
    pub n: usize,
    pub k_rp: usize,
    pub params: EmbeddingParams,
    pub volume: f64,
    pub components: usize,
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub z: Panel,
    pub info: EmbeddingInfo,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.z.rows()
    }

    /// `||Z_i - Z_j||^2`.
    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.z
            .row(i)
            .iter()
            .zip(self.z.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Commute time `V_G * ||Z_i - Z_j||^2`.
    #[inline]
    pub fn commute_time(&self, i: usize, j: usize) -> f64 {
        self.info.volume * self.distance(i, j)
    }

    /// Persists `Z` as an `n x k` block matrix (one block column) under
    /// `<root>/<name>/z` with the metadata beside it.
    pub fn save(&self, root: &Path, name: &str, block_size: usize) -> Result<MatrixHandle> {
        let meta = MatrixMeta::new(
            format!("{name}/z"),
            self.n(),
            self.info.k_rp,
            block_size,
            self.info.k_rp,
            false,
        )?;
        let h = blockstore::write_dense(root, meta, self.z.data())?;
        let path = root.join(name).join(EMBEDDING_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&self.info)?).map_err(|e| Error::io(&path, e))?;
        Ok(h)
    }

    pub fn load(root: &Path, name: &str) -> Result<Self> {
        let path = root.join(name).join(EMBEDDING_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let info: EmbeddingInfo = serde_json::from_slice(&bytes)?;
        let h = blockstore::open_matrix(root, &format!("{name}/z"))?;
        if h.meta.n_rows != info.n || h.meta.n_cols != info.k_rp {
            return Err(Error::Provenance(format!(
                "stored embedding is {}x{}, metadata says {}x{}",
                h.meta.n_rows, h.meta.n_cols, info.n, info.k_rp
            )));
        }
        let z = Panel::from_vec(info.n, info.k_rp, blockstore::read_dense(&h)?)?;
        Ok(Embedding { z, info })
    }
}

/// `y = W^{1/2} B q` for the listed projection indices, one column each.
/// Edge `(u, v)`, `u < v`, adds `q_e sqrt(w)` to `y_u` and subtracts it from
/// `y_v`, with `q_e = +-1/sqrt(k)`. Partial sums per block are reduced in
/// canonical block order.
pub fn project_incidence_columns(
    pool: &Pool,
    a: &MatrixHandle,
    seed: u64,
    projections: &[u64],
    k: usize,
) -> Result<Panel> {
    let m = &a.meta;
    let n = m.n_rows;
    let cols = projections.len();
    let scale = 1.0 / (k as f64).sqrt();
    let keys: Vec<BlockId> = m.block_ids().into_iter().filter(|id| id.row <= id.col).collect();
    let (parts, _) = pool.run_stage(TaskSet::new("project", keys)?, |ctx, id| {
        let blk = ctx.read(a, *id)?;
        let (r0, c0) = (m.row_offset(id.row), m.col_offset(id.col));
        let mut rows = vec![0.0; blk.rows() * cols];
        let mut colv = vec![0.0; blk.cols() * cols];
        for r in 0..blk.rows() {
            let u = r0 + r;
            for (c, &w) in blk.row(r).iter().enumerate() {
                let v = c0 + c;
                if v <= u || w <= 0.0 {
                    continue;
                }
                let sw = w.sqrt();
                for (t, &j) in projections.iter().enumerate() {
                    let s = EdgeProjectionSeed::new(seed, j).sign(u, v) * scale * sw;
                    rows[r * cols + t] += s;
                    colv[c * cols + t] -= s;
                }
            }
        }
        Ok((rows, colv))
    })?;
    let mut y = Panel::zeros(n, cols);
    let data = y.data_mut();
    for (id, (rows, colv)) in parts {
        let r0 = m.row_offset(id.row) * cols;
        for (o, v) in data[r0..r0 + rows.len()].iter_mut().zip(&rows) {
            *o += v;
        }
        let c0 = m.col_offset(id.col) * cols;
        for (o, v) in data[c0..c0 + colv.len()].iter_mut().zip(&colv) {
            *o += v;
        }
    }
    Ok(y)
}

/// Single projection column `j` of a `k`-column embedding.
pub fn project_incidence(
    pool: &Pool,
    a: &MatrixHandle,
    es: EdgeProjectionSeed,
    k: usize,
) -> Result<DenseVector> {
    blockops::check_adjacency(pool, a)?;
    let y = project_incidence_columns(pool, a, es.seed, &[es.projection], k)?;
    Ok(DenseVector(y.into_data()))
}

/// Connected components of the graph `A > 0`, via a spanning forest per
/// block merged in canonical order.
pub fn count_components(pool: &Pool, a: &MatrixHandle) -> Result<usize> {
    let m = &a.meta;
    let keys: Vec<BlockId> = m.block_ids().into_iter().filter(|id| id.row <= id.col).collect();
    let (parts, _) = pool.run_stage(TaskSet::new("components", keys)?, |ctx, id| {
        let blk = ctx.read(a, *id)?;
        let (r0, c0) = (m.row_offset(id.row), m.col_offset(id.col));
        let mut local = UnionFind::new(m.n_rows);
        let mut forest = Vec::new();
        for r in 0..blk.rows() {
            for (c, &w) in blk.row(r).iter().enumerate() {
                if w > 0.0 && local.union(r0 + r, c0 + c) {
                    forest.push((r0 + r, c0 + c));
                }
            }
        }
        Ok(forest)
    })?;
    let mut uf = UnionFind::new(m.n_rows);
    let mut merged = 0;
    for (_, forest) in parts {
        for (u, v) in forest {
            if uf.union(u, v) {
                merged += 1;
            }
        }
    }
    Ok(m.n_rows - merged)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// A graph prepared for embedding: Laplacian, degrees and solver chain.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub adjacency: MatrixHandle,
    pub laplacian: MatrixHandle,
    pub degrees: DiagonalMatrix,
    pub chain: ChainPreconditioner,
    pub components: usize,
}

/// Validates `a`, builds `L = D - A` and the chain once. The chain lives
/// under `<root>/<name>/chain`.
pub fn prepare(
    pool: &Pool,
    scratch: &Scratch,
    a: &MatrixHandle,
    d: usize,
    form: ChainForm,
    name: &str,
) -> Result<PreparedGraph> {
    blockops::check_adjacency(pool, a)?;
    if a.meta.n_rows < 2 {
        return Err(Error::InvalidParameter("a graph needs at least two nodes".into()));
    }
    let (laplacian, degrees) = blockops::laplacian(pool, scratch, a, &scratch.fresh_name("laplacian"))?;
    let dec = SddDecomposition::from_parts(pool, degrees.clone(), a.clone())?;
    let chain = sdd::chain_from_decomposition(
        pool,
        scratch,
        &dec,
        &laplacian,
        d,
        form,
        &format!("{name}/chain"),
    )?;
    let components = count_components(pool, a)?;
    if components > 1 {
        log::warn!(
            "`{}` has {components} connected components; distances across them are meaningless",
            a.meta.name
        );
    }
    Ok(PreparedGraph {
        adjacency: a.clone(),
        laplacian,
        degrees,
        chain,
        components,
    })
}

/// Embeds a prepared graph; the chain's `d` and form must match `params`.
pub fn embed_prepared(pool: &Pool, g: &PreparedGraph, params: &EmbeddingParams) -> Result<Embedding> {
    if g.chain.info.d != params.d || g.chain.info.form != params.form {
        return Err(Error::InvalidParameter(format!(
            "chain was built with d = {} ({:?}), parameters ask for d = {} ({:?})",
            g.chain.info.d, g.chain.info.form, params.d, params.form
        )));
    }
    sdd::richardson_steps(params.delta)?;
    let n = g.adjacency.meta.n_rows;
    let k = params.k_for(n)?;
    let projections: Vec<u64> = (0..k as u64).collect();
    let y = project_incidence_columns(pool, &g.adjacency, params.seed, &projections, k)?;
    let mut z = g.chain.estimate_solution_panel(pool, &y, params.delta)?;
    z.center_columns();
    if z.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("embedding of `{}`", g.adjacency.meta.name)));
    }
    Ok(Embedding {
        z,
        info: EmbeddingInfo {
            source: g.adjacency.meta.name.clone(),
            n,
            k_rp: k,
            params: *params,
            volume: g.degrees.trace(),
            components: g.components,
            connected: g.components == 1,
        },
    })
}

/// Full pipeline: prepare the graph, then embed it.
pub fn commute_time_embedding(
    pool: &Pool,
    scratch: &Scratch,
    a: &MatrixHandle,
    params: &EmbeddingParams,
    name: &str,
) -> Result<Embedding> {
    let g = prepare(pool, scratch, a, params.d, params.form, name)?;
    let emb = embed_prepared(pool, &g, params);
    blockstore::remove_matrix(g.laplacian)?;
    emb
}

/// `||Z_i - Z_j||^2` for `i` in `rows`, `j` in `cols`.
pub fn pairwise_distance_block(z: &Embedding, rows: Range<usize>, cols: Range<usize>) -> Result<Block> {
    let n = z.n();
    if rows.end > n || cols.end > n || rows.start > rows.end || cols.start > cols.end {
        return Err(Error::Dimension(format!(
            "ranges {rows:?} x {cols:?} exceed {n} nodes"
        )));
    }
    Ok(Block::from_fn(rows.len(), cols.len(), |r, c| {
        z.distance(rows.start + r, cols.start + c)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockstore::write_dense;

    fn setup() -> (tempfile::TempDir, Scratch, Pool) {
        let dir = tempfile::tempdir().unwrap();
        let scratch = Scratch::open(dir.path()).unwrap();
        (dir, scratch, Pool::new(2).unwrap())
    }

    fn graph(s: &Scratch, name: &str, n: usize, p: usize, v: &[f64]) -> MatrixHandle {
        write_dense(s.root(), MatrixMeta::square(name, n, p, true).unwrap(), v).unwrap()
    }

    #[test]
    fn projection_sizes() {
        assert_eq!(k_rp(2000.0, 1e-2).unwrap(), 13);
        assert_eq!(k_rp(2000.0, 1e-3).unwrap(), 15);
        assert_eq!(k_rp(std::f64::consts::E, 1.0).unwrap(), 1);
        assert!(k_rp(10.0, 0.0).is_err());
    }

    #[test]
    fn two_node_projection() {
        let (_d, s, pool) = setup();
        let a = graph(&s, "a", 2, 1, &[0.0, 4.0, 4.0, 0.0]);
        let es = EdgeProjectionSeed::new(5, 0);
        let y = project_incidence(&pool, &a, es, 1).unwrap();
        let q = es.sign(0, 1);
        assert_eq!(y.0, vec![2.0 * q, -2.0 * q]);
    }

    #[test]
    fn empty_graph_projects_to_zero() {
        let (_d, s, pool) = setup();
        let a = graph(&s, "a", 5, 2, &[0.0; 25]);
        let y = project_incidence(&pool, &a, EdgeProjectionSeed::new(1, 0), 3).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn triangle_projection_norm() {
        let (_d, s, pool) = setup();
        let a = graph(&s, "a", 3, 2, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        for seed in 0..5 {
            let k = 4;
            let y = project_incidence(&pool, &a, EdgeProjectionSeed::new(seed, 1), k).unwrap();
            assert!(y.iter().sum::<f64>().abs() < 1e-15);
            // Edge signs over the three edges, enumerated directly.
            let es = EdgeProjectionSeed::new(seed, 1);
            let mut want = [0.0f64; 3];
            for (u, v) in [(0, 1), (0, 2), (1, 2)] {
                let q = es.sign(u, v) / (k as f64).sqrt();
                want[u] += q;
                want[v] -= q;
            }
            for i in 0..3 {
                assert!((y[i] - want[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_adjacency() {
        let (_d, s, pool) = setup();
        let a = graph(&s, "a", 2, 1, &[0.0, 1.0, 2.0, 0.0]);
        assert!(project_incidence(&pool, &a, EdgeProjectionSeed::new(1, 0), 1).is_err());
        let b = graph(&s, "b", 2, 1, &[1.0, 1.0, 1.0, 0.0]);
        assert!(project_incidence(&pool, &b, EdgeProjectionSeed::new(1, 0), 1).is_err());
    }

    #[test]
    fn components_of_split_graph() {
        let (_d, s, pool) = setup();
        let mut v = vec![0.0; 25];
        for (u, w) in [(0, 1), (1, 2), (3, 4)] {
            v[u * 5 + w] = 1.0;
            v[w * 5 + u] = 1.0;
        }
        let a = graph(&s, "a", 5, 2, &v);
        assert_eq!(count_components(&pool, &a).unwrap(), 2);
    }

    #[test]
    fn distance_block_shape_and_symmetry() {
        let z = Panel::from_vec(3, 2, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        let e = Embedding {
            z,
            info: EmbeddingInfo {
                source: "x".into(),
                n: 3,
                k_rp: 2,
                params: EmbeddingParams {
                    eps_rp: 0.5,
                    delta: 0.1,
                    d: 1,
                    seed: 0,
                    form: ChainForm::Halved,
                    k_override: None,
                },
                volume: 1.0,
                components: 1,
                connected: true,
            },
        };
        let ab = pairwise_distance_block(&e, 0..2, 1..3).unwrap();
        let ba = pairwise_distance_block(&e, 1..3, 0..2).unwrap();
        assert_eq!(ab.transpose(), ba);
        let diag = pairwise_distance_block(&e, 0..3, 0..3).unwrap();
        assert!((0..3).all(|i| diag.get(i, i) == 0.0));
        assert_eq!(diag.get(0, 1), 8.0);
        assert!(pairwise_distance_block(&e, 0..4, 0..1).is_err());
    }
}
