#![allow(dead_code)]

use densecad::blockstore::{write_dense, MatrixHandle, MatrixMeta, Scratch};
use densecad::oracle::{DenseMatrix, DEFAULT_CAP};
use densecad::runtime::Pool;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn setup(workers: usize) -> (tempfile::TempDir, Scratch, Pool) {
    let dir = tempfile::tempdir().unwrap();
    let scratch = Scratch::open(dir.path()).unwrap();
    (dir, scratch, Pool::new(workers).unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn store(scratch: &Scratch, name: &str, n: usize, p: usize, vals: &[f64], sym: bool) -> MatrixHandle {
    write_dense(scratch.root(), MatrixMeta::square(name, n, p, sym).unwrap(), vals).unwrap()
}

/// Symmetric, zero diagonal, weights in (0, 1]; each pair present with
/// probability `density`, plus a ring so the graph is connected.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let ring = j == i + 1 || (i == 0 && j == n - 1);
            if ring || rng.random_bool(density) {
                let w = 1.0 - rng.random::<f64>();
                a[i * n + j] = w;
                a[j * n + i] = w;
            }
        }
    }
    a
}

/// `D - A` with every diagonal entry raised by a positive slack, so the
/// system is strictly dominant.
pub fn strictly_dominant(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut m: Vec<f64> = random_graph(rng, n, 0.3).into_iter().map(|v| -v).collect();
    for i in 0..n {
        let off: f64 = (0..n).map(|j| m[i * n + j].abs()).sum();
        m[i * n + i] = off + rng.random_range(0.05..1.0);
    }
    m
}

pub fn dense(n: usize, vals: &[f64]) -> DenseMatrix {
    DenseMatrix::from_row_major(n, vals, DEFAULT_CAP).unwrap()
}

/// Largest `|x - y| / max(|y|, floor)`.
pub fn max_rel(x: &[f64], y: &[f64], floor: f64) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Mann-Whitney AUC of `scores` for the positive `labels`, with average
/// ranks for ties. Returns `(auc, z)` under the no-signal null.
pub fn auc_with_z(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut s = 0;
    while s < n {
        let mut e = s;
        while e + 1 < n && scores[idx[e + 1]] == scores[idx[s]] {
            e += 1;
        }
        let r = (s + e) as f64 / 2.0 + 1.0;
        for &i in &idx[s..=e] {
            ranks[i] = r;
        }
        let t = (e - s + 1) as f64;
        tie_term += t * t * t - t;
        s = e + 1;
    }
    let n1 = labels.iter().filter(|&&l| l).count() as f64;
    let n0 = n as f64 - n1;
    let r1: f64 = (0..n).filter(|&i| labels[i]).map(|i| ranks[i]).sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let nn = n as f64;
    let var = n1 * n0 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    (u / (n1 * n0), (u - n1 * n0 / 2.0) / var.sqrt())
}
