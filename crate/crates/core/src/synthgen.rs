//! Synthetic graph pairs with planted anomalies, and Gaussian kernel graphs.
//!
//! Points are drawn from a 2-D Gaussian mixture. The first graph connects
//! every pair with weight `exp(-dist)`. The second graph uses slightly
//! perturbed points, plus a sparse random matrix `R` symmetrized as
//! `(R + R^T) / 2`. Changed pairs that cross clusters are the ground truth.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::blockops;
use crate::blockstore::{MatrixHandle, MatrixMeta, Scratch};
use crate::error::{Error, Result};
use crate::runtime::Pool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub means: Vec<[f64; 2]>,
    /// Standard deviation of each (isotropic) mixture component.
    pub cluster_sd: f64,
    /// Standard deviation of the perturbation applied before building the
    /// second graph.
    pub noise: f64,
    pub flip_prob: f64,
    pub seed: u64,
    pub block_size: Option<usize>,
}

impl SyntheticSpec {
    /// Four unit-variance clusters at `(+-3, +-3)`, perturbation 5% of the
    /// distance between adjacent means, 5% flips.
    pub fn new(n: usize, seed: u64) -> Self {
        let means = vec![[3.0, 3.0], [3.0, -3.0], [-3.0, 3.0], [-3.0, -3.0]];
        SyntheticSpec {
            n,
            means,
            cluster_sd: 1.0,
            noise: 0.05 * 6.0,
            flip_prob: 0.05,
            seed,
            block_size: None,
        }
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size.unwrap_or_else(|| default_block_size(self.n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.n < self.components() {
            return Err(Error::InvalidParameter(format!(
                "{} nodes cannot fill {} clusters",
                self.n,
                self.components()
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidParameter(format!(
                "flip probability {} is outside [0, 1]",
                self.flip_prob
            )));
        }
        if !(self.noise >= 0.0 && self.cluster_sd >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidParameter("noise and spread must be finite and non-negative".into()));
        }
        if self.block_size == Some(0) {
            return Err(Error::InvalidParameter("block size must be positive".into()));
        }
        Ok(())
    }
}

/// `ceil(sqrt(n))`.
pub fn default_block_size(n: usize) -> usize {
    let mut p = (n as f64).sqrt() as usize;
    while p * p < n {
        p += 1;
    }
    p.max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub clusters: Vec<usize>,
    pub anomalous_nodes: Vec<usize>,
    pub anomalous_edges: Vec<[usize; 2]>,
    /// True when both graphs are bit-identical.
    pub identical: bool,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn node_labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.clusters.len()];
        for &i in &self.anomalous_nodes {
            labels[i] = true;
        }
        labels
    }
}

/// The sampled quantities behind one synthetic pair.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub points: Vec<[f64; 2]>,
    pub perturbed: Vec<[f64; 2]>,
    pub clusters: Vec<usize>,
    /// Nonzero entries of `R` on ordered pairs.
    pub flips: HashMap<(usize, usize), f64>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl SyntheticSample {
    pub fn draw(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let spread = Normal::new(0.0, spec.cluster_sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let jitter = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let k = spec.components();
        let mut clusters = Vec::with_capacity(spec.n);
        let mut points = Vec::with_capacity(spec.n);
        for _ in 0..spec.n {
            let c = rng.random_range(0..k);
            let m = spec.means[c];
            clusters.push(c);
            points.push([m[0] + rng.sample(spread), m[1] + rng.sample(spread)]);
        }
        let perturbed = points
            .iter()
            .map(|p| [p[0] + rng.sample(jitter), p[1] + rng.sample(jitter)])
            .collect();
        let mut flips = HashMap::new();
        for i in 0..spec.n {
            for j in 0..spec.n {
                if i != j && rng.random::<f64>() < spec.flip_prob {
                    let v: f64 = rng.sample(Open01);
                    flips.insert((i, j), v);
                }
            }
        }
        Ok(SyntheticSample {
            points,
            perturbed,
            clusters,
            flips,
        })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn weight1(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            (-dist(self.points[i], self.points[j])).exp()
        }
    }

    pub fn weight2(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let q = (-dist(self.perturbed[i], self.perturbed[j])).exp();
        let r = self.flips.get(&(i, j)).copied().unwrap_or(0.0)
            + self.flips.get(&(j, i)).copied().unwrap_or(0.0);
        q + r / 2.0
    }

    pub fn ground_truth(&self, spec: &SyntheticSpec) -> GroundTruth {
        let mut edges = BTreeSet::new();
        for &(i, j) in self.flips.keys() {
            if self.clusters[i] != self.clusters[j] {
                edges.insert([i.min(j), i.max(j)]);
            }
        }
        let nodes: BTreeSet<usize> = edges.iter().flat_map(|e| [e[0], e[1]]).collect();
        GroundTruth {
            clusters: self.clusters.clone(),
            anomalous_nodes: nodes.into_iter().collect(),
            anomalous_edges: edges.into_iter().collect(),
            identical: spec.noise == 0.0 && self.flips.is_empty(),
        }
    }

    /// Both adjacency matrices, row-major.
    pub fn dense(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut a1 = Vec::with_capacity(n * n);
        let mut a2 = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                a1.push(self.weight1(i, j));
                a2.push(self.weight2(i, j));
            }
        }
        (a1, a2)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub a1: MatrixHandle,
    pub a2: MatrixHandle,
    pub truth: GroundTruth,
    pub sample: SyntheticSample,
}

/// Samples a pair and writes both graphs blockwise as `names.0`, `names.1`.
pub fn generate_pair(
    pool: &Pool,
    scratch: &Scratch,
    spec: &SyntheticSpec,
    names: (&str, &str),
) -> Result<SyntheticPair> {
    let sample = SyntheticSample::draw(spec)?;
    let p = spec.block_size();
    let a1 = blockops::from_fn(pool, scratch, MatrixMeta::square(names.0, spec.n, p, true)?, |i, j| {
        sample.weight1(i, j)
    })?;
    let a2 = blockops::from_fn(pool, scratch, MatrixMeta::square(names.1, spec.n, p, true)?, |i, j| {
        sample.weight2(i, j)
    })?;
    Ok(SyntheticPair {
        a1,
        a2,
        truth: sample.ground_truth(spec),
        sample,
    })
}

/// Gaussian kernel `exp(-|x_i - x_j|^2 / (2 sigma^2))`, zero diagonal.
pub fn kernel_graph(
    pool: &Pool,
    scratch: &Scratch,
    points: &[Vec<f64>],
    sigma: f64,
    p: usize,
    name: &str,
) -> Result<MatrixHandle> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {sigma}")));
    }
    if let Some(i) = points.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("feature vector {i}")));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|x| x.len() != dim) {
        return Err(Error::Dimension("feature vectors differ in length".into()));
    }
    let denom = 2.0 * sigma * sigma;
    blockops::from_fn(pool, scratch, MatrixMeta::square(name, points.len(), p, true)?, |i, j| {
        if i == j {
            return 0.0;
        }
        let sq: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        (-sq / denom).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockstore::read_dense;

    fn setup() -> (tempfile::TempDir, Scratch, Pool) {
        let dir = tempfile::tempdir().unwrap();
        let scratch = Scratch::open(dir.path()).unwrap();
        (dir, scratch, Pool::new(2).unwrap())
    }

    #[test]
    fn no_flips_means_no_truth() {
        let mut spec = SyntheticSpec::new(40, 1);
        spec.flip_prob = 0.0;
        let s = SyntheticSample::draw(&spec).unwrap();
        let t = s.ground_truth(&spec);
        assert!(t.anomalous_edges.is_empty() && t.anomalous_nodes.is_empty());
        assert!(!t.identical);
        for i in 0..40 {
            for j in 0..40 {
                let q = if i == j { 0.0 } else { (-dist(s.perturbed[i], s.perturbed[j])).exp() };
                assert_eq!(s.weight2(i, j), q);
            }
        }
    }

    #[test]
    fn no_noise_no_flips_is_identical() {
        let (_d, sc, pool) = setup();
        let mut spec = SyntheticSpec::new(30, 2);
        spec.flip_prob = 0.0;
        spec.noise = 0.0;
        let pair = generate_pair(&pool, &sc, &spec, ("g1", "g2")).unwrap();
        assert!(pair.truth.identical);
        assert_eq!(read_dense(&pair.a1).unwrap(), read_dense(&pair.a2).unwrap());
    }

    #[test]
    fn flip_fraction_is_binomial() {
        let spec = SyntheticSpec::new(500, 3);
        let s = SyntheticSample::draw(&spec).unwrap();
        let trials = (500 * 499) as f64;
        let mean = trials * 0.05;
        let sd = (trials * 0.05 * 0.95).sqrt();
        assert!((s.flips.len() as f64 - mean).abs() <= 3.0 * sd, "{}", s.flips.len());
    }

    #[test]
    fn graphs_are_symmetric_and_bounded() {
        let spec = SyntheticSpec::new(60, 4);
        let s = SyntheticSample::draw(&spec).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                assert_eq!(s.weight2(i, j), s.weight2(j, i));
                assert_eq!(s.weight1(i, j), s.weight1(j, i));
                if i != j {
                    assert!(s.weight1(i, j) > 0.0 && s.weight1(i, j) <= 1.0);
                    assert!(s.weight2(i, j) <= 2.0);
                }
            }
        }
        let t = s.ground_truth(&spec);
        for e in &t.anomalous_edges {
            assert!(e[0] < e[1]);
            assert_ne!(t.clusters[e[0]], t.clusters[e[1]]);
            assert!(s.flips.contains_key(&(e[0], e[1])) || s.flips.contains_key(&(e[1], e[0])));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = SyntheticSpec::new(50, 9);
        let a = SyntheticSample::draw(&spec).unwrap();
        let b = SyntheticSample::draw(&spec).unwrap();
        assert_eq!(a.dense(), b.dense());
        assert_eq!(a.ground_truth(&spec), b.ground_truth(&spec));
    }

    #[test]
    fn kernel_weights() {
        let (_d, sc, pool) = setup();
        let sigma = 388.0;
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![sigma * 2f64.sqrt(), 0.0]];
        let h = kernel_graph(&pool, &sc, &pts, sigma, 2, "k").unwrap();
        let v = read_dense(&h).unwrap();
        assert_eq!(v[1], 1.0);
        assert!((v[2] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(v[0], 0.0);
        assert!(kernel_graph(&pool, &sc, &pts, 0.0, 2, "k2").is_err());
        let bad = vec![vec![f64::NAN], vec![0.0]];
        assert!(kernel_graph(&pool, &sc, &bad, 1.0, 2, "k3").is_err());
    }

    #[test]
    fn block_size_default() {
        assert_eq!(default_block_size(2000), 45);
        assert_eq!(default_block_size(100), 10);
        assert_eq!(default_block_size(1), 1);
    }
}
