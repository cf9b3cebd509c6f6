//! Dense in-memory reference computations for verification at small `n`.
//!
//! Nothing here touches the block store except the conversions at the
//! boundary; the arithmetic is plain loops or `nalgebra` so that it shares no
//! code path with the block algebra it checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::anomaly::{top_k, AnomalyReport, EdgeScore, ReportParameters};
use crate::blockops::{DiagonalMatrix, Panel};
use crate::blockstore::{self, MatrixHandle};
use crate::error::{Error, Result};
use crate::rng::EdgeProjectionSeed;
use crate::sdd::{richardson_steps, ChainForm, LinearOperator, ReferenceSolver};

pub const DEFAULT_CAP: usize = 4096;

/// Eigenvalues below this fraction of the largest are treated as null space.
pub const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    inner: DMatrix<f64>,
}

impl DenseMatrix {
    /// Square matrix from row-major values, refusing `n > cap`.
    pub fn from_row_major(n: usize, values: &[f64], cap: usize) -> Result<Self> {
        if n > cap {
            return Err(Error::Oversized { n, cap });
        }
        if values.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} values for a {n}x{n} matrix",
                values.len()
            )));
        }
        Ok(DenseMatrix {
            inner: DMatrix::from_row_slice(n, n, values),
        })
    }

    pub fn from_handle(h: &MatrixHandle, cap: usize) -> Result<Self> {
        if !h.meta.is_square() || h.meta.n_rows != h.meta.n_cols {
            return Err(Error::Dimension(format!("`{}` is not square", h.meta.name)));
        }
        let n = h.meta.n_rows;
        if n > cap {
            return Err(Error::Oversized { n, cap });
        }
        Self::from_row_major(n, &blockstore::read_dense(h)?, cap)
    }

    pub fn from_nalgebra(inner: DMatrix<f64>) -> Self {
        DenseMatrix { inner }
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_nalgebra(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn degrees(&self) -> DiagonalMatrix {
        DiagonalMatrix(self.inner.row_iter().map(|r| r.sum()).collect())
    }

    pub fn volume(&self) -> f64 {
        self.inner.sum()
    }

    pub fn laplacian(&self) -> DenseMatrix {
        let deg = self.degrees();
        let mut l = -self.inner.clone();
        for i in 0..self.n() {
            l[(i, i)] += deg.0[i];
        }
        DenseMatrix { inner: l }
    }

    /// `diag(dl) * self * diag(dr)`.
    pub fn diag_scale(&self, dl: &DiagonalMatrix, dr: &DiagonalMatrix) -> DenseMatrix {
        let n = self.n();
        DenseMatrix {
            inner: DMatrix::from_fn(n, n, |i, j| dl.0[i] * self.inner[(i, j)] * dr.0[j]),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (&self.inner * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    /// Moore-Penrose pseudoinverse of a symmetric matrix via its
    /// eigendecomposition.
    pub fn pseudoinverse(&self) -> DenseMatrix {
        let eig = SymmetricEigen::new(self.inner.clone());
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = PINV_RTOL * lmax;
        let inv: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| if l.abs() > tol { 1.0 / l } else { 0.0 })
            .collect();
        let mut scaled = eig.eigenvectors.clone();
        for (j, s) in inv.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        let p = &scaled * eig.eigenvectors.transpose();
        // Rounding leaves p slightly asymmetric; downstream distances must
        // be exactly symmetric.
        DenseMatrix {
            inner: (&p + p.transpose()) * 0.5,
        }
    }
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &Panel) -> Result<Panel> {
        if x.rows() != self.n() {
            return Err(Error::Dimension(format!(
                "panel has {} rows, operator is {}x{}",
                x.rows(),
                self.n(),
                self.n()
            )));
        }
        let xm = DMatrix::from_row_slice(x.rows(), x.cols(), x.data());
        let y = &self.inner * xm;
        let mut data = Vec::with_capacity(y.len());
        for r in 0..y.nrows() {
            for c in 0..y.ncols() {
                data.push(y[(r, c)]);
            }
        }
        Panel::from_vec(y.nrows(), y.ncols(), data)
    }
}

/// Textbook triple loop, row-major in and out.
pub fn dense_multiply(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Solves `M x = b` by LU; a singular `M` falls back to the pseudoinverse if
/// `b` lies in its range.
pub fn exact_solve(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != m.n() {
        return Err(Error::Dimension(format!(
            "right-hand side of length {} for a {}-node system",
            b.len(),
            m.n()
        )));
    }
    let rhs = DVector::from_column_slice(b);
    let lu = m.inner.clone().lu();
    if let Some(x) = lu.solve(&rhs) {
        if x.iter().all(|v| v.is_finite()) && (&m.inner * &x - &rhs).norm() <= 1e-8 * rhs.norm().max(1e-300) {
            return Ok(x.as_slice().to_vec());
        }
    }
    let x = &m.pseudoinverse().inner * &rhs;
    let resid = (&m.inner * &x - &rhs).norm();
    if resid > 1e-8 * rhs.norm().max(1.0) {
        return Err(Error::Singular(format!(
            "right-hand side is not in the range (residual {resid:e})"
        )));
    }
    Ok(x.as_slice().to_vec())
}

/// Number of connected components of the graph with adjacency `a > 0`.
pub fn components(a: &DenseMatrix) -> usize {
    let n = a.n();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if !seen[v] && a.get(u, v) > 0.0 {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

/// Effective resistances `l+_ii + l+_jj - 2 l+_ij`.
pub fn effective_resistances(a: &DenseMatrix) -> DenseMatrix {
    let lp = a.laplacian().pseudoinverse();
    let n = a.n();
    DenseMatrix {
        inner: DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                lp.get(i, i) + lp.get(j, j) - 2.0 * lp.get(i, j)
            }
        }),
    }
}

/// Commute times `V_G * R(i, j)`.
pub fn exact_commute_times(a: &DenseMatrix) -> DenseMatrix {
    let vol = a.volume();
    let r = effective_resistances(a);
    DenseMatrix {
        inner: r.inner * vol,
    }
}

/// Mean of `|approx - truth|` over pairs `i < j`.
pub fn mean_abs_deviation(approx: &DenseMatrix, truth: &DenseMatrix) -> f64 {
    pair_mean(approx, truth, |a, t| (a - t).abs())
}

/// Mean of `|approx - truth| / truth` over pairs `i < j` with `truth > 0`.
pub fn mean_relative_deviation(approx: &DenseMatrix, truth: &DenseMatrix) -> f64 {
    pair_mean(approx, truth, |a, t| if t > 0.0 { (a - t).abs() / t } else { f64::NAN })
}

fn pair_mean(approx: &DenseMatrix, truth: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = truth.n();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let v = f(approx.get(i, j), truth.get(i, j));
            if v.is_finite() {
                sum += v;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `(err_approx - err_baseline) / err_baseline`.
pub fn relative_error(err_approx: f64, err_baseline: f64) -> Result<f64> {
    if err_baseline == 0.0 {
        return Err(Error::InvalidParameter("baseline error is zero".into()));
    }
    Ok((err_approx - err_baseline) / err_baseline)
}

/// Relative error of `approx` against `baseline`, both measured as mean
/// absolute deviation from `truth`.
pub fn relative_error_matrices(
    approx: &DenseMatrix,
    baseline: &DenseMatrix,
    truth: &DenseMatrix,
) -> Result<f64> {
    relative_error(mean_abs_deviation(approx, truth), mean_abs_deviation(baseline, truth))
}

/// Squared row distances of an embedding scaled by `scale`.
pub fn embedding_distances(z: &Panel, scale: f64) -> DenseMatrix {
    let n = z.rows();
    DenseMatrix {
        inner: DMatrix::from_fn(n, n, |i, j| {
            let d: f64 = z
                .row(i)
                .iter()
                .zip(z.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            scale * d
        }),
    }
}

/// Projected incidence panel computed by direct edge enumeration.
pub fn dense_projection(a: &DenseMatrix, seed: u64, k: usize) -> Panel {
    let n = a.n();
    let mut y = Panel::zeros(n, k);
    let scale = 1.0 / (k as f64).sqrt();
    let data = y.data_mut();
    for u in 0..n {
        for v in u + 1..n {
            let w = a.get(u, v);
            if w > 0.0 {
                for j in 0..k {
                    let s = EdgeProjectionSeed::new(seed, j as u64).sign(u, v) * scale * w.sqrt();
                    data[u * k + j] += s;
                    data[v * k + j] -= s;
                }
            }
        }
    }
    y
}

/// The in-memory baseline: random projection plus the unprecomputed
/// Richardson solver, columns centred.
pub fn baseline_embedding(
    a: &DenseMatrix,
    k: usize,
    seed: u64,
    delta: f64,
    d: usize,
    form: ChainForm,
) -> Result<Panel> {
    richardson_steps(delta)?;
    let deg = a.degrees();
    let c = deg.inv_sqrt();
    let s = a.diag_scale(&c, &c);
    let solver = ReferenceSolver::new(&deg, s, a.laplacian(), d, form)?;
    let y = dense_projection(a, seed, k);
    let mut z = solver.exact_solve(&y, delta)?;
    z.center_columns();
    Ok(z)
}

/// Scores from given commute-time matrices, with the same tie rules as the
/// block pipeline.
pub fn cad_from_commute_times(
    a1: &DenseMatrix,
    a2: &DenseMatrix,
    c1: &DenseMatrix,
    c2: &DenseMatrix,
    top: usize,
) -> Result<(AnomalyReport, Vec<f64>)> {
    let n = a1.n();
    if a2.n() != n || c1.n() != n || c2.n() != n {
        return Err(Error::Dimension("graph pair and commute times differ in size".into()));
    }
    let mut scores = vec![0.0; n];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let da = (a1.get(i, j) - a2.get(i, j)).abs();
            let de = if da == 0.0 {
                0.0
            } else {
                da * (c1.get(i, j) - c2.get(i, j)).abs()
            };
            scores[i] += de;
            if i < j {
                edges.push(EdgeScore { i, j, delta_e: de });
            }
        }
    }
    edges.sort_by(|a, b| {
        b.delta_e
            .total_cmp(&a.delta_e)
            .then(a.i.cmp(&b.i))
            .then(a.j.cmp(&b.j))
    });
    edges.truncate(top);
    let report = AnomalyReport {
        parameters: ReportParameters {
            method: "exact".into(),
            n,
            top,
            volumes: [a1.volume(), a2.volume()],
            block_size: None,
            embeddings: None,
            skip: None,
        },
        nodes: top_k(&scores, top)?,
        edges,
    };
    Ok((report, scores))
}

/// Centralized scoring with exact commute times.
pub fn oracle_cad(a1: &DenseMatrix, a2: &DenseMatrix, top: usize) -> Result<(AnomalyReport, Vec<f64>)> {
    let c1 = exact_commute_times(a1);
    let c2 = exact_commute_times(a2);
    cad_from_commute_times(a1, a2, &c1, &c2, top)
}
