//! Edge-list ingestion: CSV rows `i,j,weight` with 0-based node ids.

use std::collections::HashMap;
use std::io::Read;

use crate::blockops;
use crate::blockstore::{MatrixHandle, MatrixMeta, Scratch};
use crate::error::{Error, Result};
use crate::runtime::Pool;

/// Parses an edge list into undirected weights keyed by `(min, max)`.
/// Repeated pairs, in either orientation, are summed.
pub fn parse_edges<R: Read>(input: R, n: usize) -> Result<HashMap<(usize, usize), f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let mut edges: HashMap<(usize, usize), f64> = HashMap::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingest {
            line: e.position().map_or(idx + 1, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        let err = |reason: String| Error::Ingest { line, reason };
        if rec.len() != 3 {
            return Err(err(format!("expected 3 fields `i,j,weight`, found {}", rec.len())));
        }
        let id = |k: usize| -> Result<usize> {
            let v: usize = rec[k]
                .parse()
                .map_err(|_| err(format!("node id `{}` is not a non-negative integer", &rec[k])))?;
            if v >= n {
                return Err(err(format!("node id {v} is out of range for {n} nodes")));
            }
            Ok(v)
        };
        let (i, j) = (id(0)?, id(1)?);
        if i == j {
            return Err(err(format!("self-loop on node {i}")));
        }
        let w: f64 = rec[2]
            .parse()
            .map_err(|_| err(format!("weight `{}` is not a number", &rec[2])))?;
        if !(w > 0.0 && w.is_finite()) {
            return Err(err(format!("weight {w} must be positive and finite")));
        }
        *edges.entry((i.min(j), i.max(j))).or_insert(0.0) += w;
    }
    Ok(edges)
}

/// Writes the symmetric adjacency of an edge list blockwise.
pub fn ingest<R: Read>(
    pool: &Pool,
    scratch: &Scratch,
    input: R,
    n: usize,
    p: usize,
    name: &str,
) -> Result<MatrixHandle> {
    let edges = parse_edges(input, n)?;
    blockops::from_fn(pool, scratch, MatrixMeta::square(name, n, p, true)?, |i, j| {
        edges.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    })
}
