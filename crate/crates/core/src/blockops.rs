//! Linear algebra over block matrices, one runtime stage per operation.
//!
//! Every product block is built by a single task that reads one block-row of
//! the left operand and one block-column of the right operand from storage
//! and writes exactly one output block, so no data moves between tasks.
//! Reductions always run in canonical block order, which makes results
//! independent of the worker count.

use std::ops::{Deref, DerefMut};

use crate::blockstore::{Block, BlockId, MatrixHandle, MatrixMeta, Scratch};
use crate::error::{Error, Result};
use crate::runtime::{Pool, TaskSet};

/// In-memory vector of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(pub Vec<f64>);

impl DenseVector {
    pub fn zeros(n: usize) -> Self {
        DenseVector(vec![0.0; n])
    }

    pub fn ones(n: usize) -> Self {
        DenseVector(vec![1.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

/// Diagonal of an `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMatrix(pub Vec<f64>);

impl DiagonalMatrix {
    pub fn identity(n: usize) -> Self {
        DiagonalMatrix(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    /// `d_i^{-1/2}`, with zero-degree entries mapped to 0 so isolated nodes
    /// drop out of every normalized operator.
    pub fn inv_sqrt(&self) -> DiagonalMatrix {
        DiagonalMatrix(
            self.0
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
                .collect(),
        )
    }

    pub fn trace(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().zip(x).map(|(d, v)| d * v).collect()
    }
}

/// Dense row-major `rows x cols` matrix held in memory; used for the thin
/// right-hand sides (one column per random projection).
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Panel {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Panel {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "panel {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Panel { rows, cols, data })
    }

    pub fn from_column(v: &[f64]) -> Self {
        Panel {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[f64]) {
        for (r, x) in v.iter().enumerate() {
            self.data[r * self.cols + c] = *x;
        }
    }

    /// Subtracts each column's mean from that column.
    pub fn center_columns(&mut self) {
        if self.rows == 0 {
            return;
        }
        for c in 0..self.cols {
            let mean = (0..self.rows).map(|r| self.get(r, c)).sum::<f64>() / self.rows as f64;
            for r in 0..self.rows {
                self.data[r * self.cols + c] -= mean;
            }
        }
    }

    /// Row-wise diagonal scaling `diag(d) * self`.
    pub fn scale_rows(&self, d: &DiagonalMatrix) -> Panel {
        let mut out = self.clone();
        for r in 0..self.rows {
            let s = d.0[r];
            for v in &mut out.data[r * self.cols..(r + 1) * self.cols] {
                *v *= s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    AbsSub,
    Hadamard,
}

impl ElementwiseOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::AbsSub => (a - b).abs(),
            ElementwiseOp::Hadamard => a * b,
        }
    }
}

fn require_square(a: &MatrixHandle) -> Result<()> {
    if a.meta.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "`{}` is {}x{} with {}x{} blocks; a square tiling is required",
            a.meta.name, a.meta.n_rows, a.meta.n_cols, a.meta.block_size, a.meta.col_block_size
        )))
    }
}

fn require_same_shape(a: &MatrixHandle, b: &MatrixHandle) -> Result<()> {
    let (x, y) = (&a.meta, &b.meta);
    if x.n_rows != y.n_rows
        || x.n_cols != y.n_cols
        || x.block_size != y.block_size
        || x.col_block_size != y.col_block_size
    {
        return Err(Error::Dimension(format!(
            "`{}` ({}x{}, blocks {}x{}) and `{}` ({}x{}, blocks {}x{}) differ in shape",
            x.name,
            x.n_rows,
            x.n_cols,
            x.block_size,
            x.col_block_size,
            y.name,
            y.n_rows,
            y.n_cols,
            y.block_size,
            y.col_block_size
        )));
    }
    Ok(())
}

fn require_len(what: &str, len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::Dimension(format!("{what} has length {len}, expected {n}")));
    }
    Ok(())
}

/// Writes a new matrix whose entry `(r, c)` (global indices) is `f(r, c)`.
pub fn from_fn<F>(pool: &Pool, scratch: &Scratch, meta: MatrixMeta, f: F) -> Result<MatrixHandle>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let out = scratch.create(meta)?;
    pool.run_stage(TaskSet::blocks("from_fn", &out), |ctx, id| {
        let (rows, cols) = out.expected_dims(*id);
        let (r0, c0) = (out.meta.row_offset(id.row), out.meta.col_offset(id.col));
        ctx.write(&out, *id, &Block::from_fn(rows, cols, |r, c| f(r0 + r, c0 + c)))
    })?;
    Ok(out)
}

pub fn identity(pool: &Pool, scratch: &Scratch, name: &str, n: usize, p: usize) -> Result<MatrixHandle> {
    let meta = MatrixMeta::square(name, n, p, true)?;
    from_fn(pool, scratch, meta, |r, c| if r == c { 1.0 } else { 0.0 })
}

/// `C = A B`, blockwise: `C_ij = sum_k A_ik B_kj` with `k` ascending.
pub fn multiply(
    pool: &Pool,
    scratch: &Scratch,
    a: &MatrixHandle,
    b: &MatrixHandle,
    out_name: &str,
) -> Result<MatrixHandle> {
    let (am, bm) = (&a.meta, &b.meta);
    if am.n_cols != bm.n_rows || am.col_block_size != bm.block_size {
        return Err(Error::Dimension(format!(
            "cannot multiply `{}` ({}x{}, inner block {}) by `{}` ({}x{}, inner block {})",
            am.name, am.n_rows, am.n_cols, am.col_block_size, bm.name, bm.n_rows, bm.n_cols,
            bm.block_size
        )));
    }
    let meta = MatrixMeta::new(
        out_name,
        am.n_rows,
        bm.n_cols,
        am.block_size,
        bm.col_block_size,
        false,
    )?;
    let out = scratch.create(meta)?;
    let inner = am.block_cols;
    pool.run_stage(TaskSet::blocks("multiply", &out), |ctx, id| {
        let (rows, cols) = out.expected_dims(*id);
        let mut acc = Block::zeros(rows, cols);
        for k in 0..inner {
            let lhs = ctx.read(a, BlockId::new(id.row, k))?;
            let rhs = ctx.read(b, BlockId::new(k, id.col))?;
            gemm_acc(&lhs, &rhs, &mut acc);
        }
        ctx.write(&out, *id, &acc)
    })?;
    Ok(out)
}

/// `acc += lhs * rhs` for dense row-major tiles.
fn gemm_acc(lhs: &Block, rhs: &Block, acc: &mut Block) {
    let (m, k, n) = (lhs.rows(), lhs.cols(), rhs.cols());
    debug_assert_eq!(rhs.rows(), k);
    debug_assert_eq!((acc.rows(), acc.cols()), (m, n));
    // SAFETY: the three slices are live, non-overlapping, and sized exactly
    // m*k, k*n and m*n with the row strides given.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            lhs.values().as_ptr(),
            k as isize,
            1,
            rhs.values().as_ptr(),
            n as isize,
            1,
            1.0,
            acc.values_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `Y = A X` for an in-memory panel `X`. One task per block-row reads that
/// row of blocks and reduces the partial products in column-block order.
pub fn matmul_panel(pool: &Pool, a: &MatrixHandle, x: &Panel) -> Result<Panel> {
    let m = &a.meta;
    require_len("panel", x.rows(), m.n_cols)?;
    let k = x.cols();
    let rows: Vec<usize> = (0..m.block_rows).collect();
    let (parts, _) = pool.run_stage(TaskSet::new("matvec", rows)?, |ctx, &i| {
        let ri = m.rows_in(i);
        let mut acc = vec![0.0; ri * k];
        for j in 0..m.block_cols {
            let blk = ctx.read(a, BlockId::new(i, j))?;
            let c0 = m.col_offset(j);
            for r in 0..ri {
                let out = &mut acc[r * k..(r + 1) * k];
                for (c, &av) in blk.row(r).iter().enumerate() {
                    let xr = x.row(c0 + c);
                    for t in 0..k {
                        out[t] += av * xr[t];
                    }
                }
            }
        }
        Ok(acc)
    })?;
    let mut data = Vec::with_capacity(m.n_rows * k);
    for (_, part) in parts {
        data.extend(part);
    }
    Panel::from_vec(m.n_rows, k, data)
}

pub fn matvec(pool: &Pool, a: &MatrixHandle, x: &DenseVector) -> Result<DenseVector> {
    require_len("vector", x.len(), a.meta.n_cols)?;
    let y = matmul_panel(pool, a, &Panel::from_column(x))?;
    Ok(DenseVector(y.into_data()))
}

/// `A 1`.
pub fn row_sums(pool: &Pool, a: &MatrixHandle) -> Result<DenseVector> {
    matvec(pool, a, &DenseVector::ones(a.meta.n_cols))
}

/// Weighted degrees `d_i = sum_j A(i, j)`.
pub fn degrees(pool: &Pool, a: &MatrixHandle) -> Result<DiagonalMatrix> {
    require_square(a)?;
    Ok(DiagonalMatrix(row_sums(pool, a)?.into_inner()))
}

pub fn elementwise(
    pool: &Pool,
    scratch: &Scratch,
    a: &MatrixHandle,
    b: &MatrixHandle,
    op: ElementwiseOp,
    out_name: &str,
) -> Result<MatrixHandle> {
    require_same_shape(a, b)?;
    let mut meta = a.meta.clone();
    meta.name = out_name.to_string();
    meta.symmetric = a.meta.symmetric && b.meta.symmetric;
    let out = scratch.create(meta)?;
    pool.run_stage(TaskSet::blocks("elementwise", &out), |ctx, id| {
        let x = ctx.read(a, *id)?;
        let y = ctx.read(b, *id)?;
        let vals = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(&u, &v)| op.apply(u, v))
            .collect();
        ctx.write(&out, *id, &Block::new(x.rows(), x.cols(), vals)?)
    })?;
    Ok(out)
}

/// `out(i, j) = dl_i * A(i, j) * dr_j`.
pub fn diag_scale(
    pool: &Pool,
    scratch: &Scratch,
    a: &MatrixHandle,
    dl: &DiagonalMatrix,
    dr: &DiagonalMatrix,
    out_name: &str,
) -> Result<MatrixHandle> {
    require_len("left diagonal", dl.len(), a.meta.n_rows)?;
    require_len("right diagonal", dr.len(), a.meta.n_cols)?;
    let mut meta = a.meta.clone();
    meta.name = out_name.to_string();
    meta.symmetric = a.meta.symmetric && dl == dr;
    let out = scratch.create(meta)?;
    pool.run_stage(TaskSet::blocks("diag_scale", &out), |ctx, id| {
        let mut x = ctx.read(a, *id)?;
        let (r0, c0) = (a.meta.row_offset(id.row), a.meta.col_offset(id.col));
        let cols = x.cols();
        for (idx, v) in x.values_mut().iter_mut().enumerate() {
            let (r, c) = (idx / cols, idx % cols);
            *v = dl.0[r0 + r] * *v * dr.0[c0 + c];
        }
        ctx.write(&out, *id, &x)
    })?;
    Ok(out)
}

/// `sum_t coeff_t * M_t + identity * I`. All terms must share one shape.
pub fn lincomb(
    pool: &Pool,
    scratch: &Scratch,
    terms: &[(f64, &MatrixHandle)],
    identity: f64,
    out_name: &str,
) -> Result<MatrixHandle> {
    let first = terms
        .first()
        .ok_or_else(|| Error::InvalidParameter("lincomb needs at least one term".into()))?
        .1;
    for (_, t) in terms {
        require_same_shape(first, t)?;
    }
    if identity != 0.0 {
        require_square(first)?;
    }
    let mut meta = first.meta.clone();
    meta.name = out_name.to_string();
    meta.symmetric = terms.iter().all(|(_, t)| t.meta.symmetric);
    let out = scratch.create(meta)?;
    pool.run_stage(TaskSet::blocks("lincomb", &out), |ctx, id| {
        let (rows, cols) = out.expected_dims(*id);
        let mut acc = Block::zeros(rows, cols);
        for (coeff, t) in terms {
            let x = ctx.read(t, *id)?;
            for (o, v) in acc.values_mut().iter_mut().zip(x.values()) {
                *o += coeff * v;
            }
        }
        if identity != 0.0 && id.row == id.col {
            for r in 0..rows {
                let v = acc.get(r, r);
                acc.set(r, r, v + identity);
            }
        }
        ctx.write(&out, *id, &acc)
    })?;
    Ok(out)
}

/// `A + I`.
pub fn add_identity(
    pool: &Pool,
    scratch: &Scratch,
    a: &MatrixHandle,
    out_name: &str,
) -> Result<MatrixHandle> {
    lincomb(pool, scratch, &[(1.0, a)], 1.0, out_name)
}

/// `L = D - A` with `D = diag(A 1)`; returns the Laplacian and the degrees.
pub fn laplacian(
    pool: &Pool,
    scratch: &Scratch,
    a: &MatrixHandle,
    out_name: &str,
) -> Result<(MatrixHandle, DiagonalMatrix)> {
    let deg = degrees(pool, a)?;
    let mut meta = a.meta.clone();
    meta.name = out_name.to_string();
    let out = scratch.create(meta)?;
    pool.run_stage(TaskSet::blocks("laplacian", &out), |ctx, id| {
        let mut x = ctx.read(a, *id)?;
        for v in x.values_mut() {
            *v = -*v;
        }
        if id.row == id.col {
            let r0 = a.meta.row_offset(id.row);
            for r in 0..x.rows() {
                let v = x.get(r, r);
                x.set(r, r, deg.0[r0 + r] + v);
            }
        }
        ctx.write(&out, *id, &x)
    })?;
    Ok((out, deg))
}

/// Largest `|A(i,j) - A(j,i)|` relative to the largest entry magnitude.
/// Reads each mirrored pair of blocks once.
pub fn asymmetry(pool: &Pool, a: &MatrixHandle) -> Result<f64> {
    require_square(a)?;
    let keys: Vec<BlockId> = a
        .meta
        .block_ids()
        .into_iter()
        .filter(|id| id.row <= id.col)
        .collect();
    let (parts, _) = pool.run_stage(TaskSet::new("symmetry", keys)?, |ctx, id| {
        let x = ctx.read(a, *id)?;
        let y = if id.row == id.col {
            x.clone()
        } else {
            ctx.read(a, BlockId::new(id.col, id.row))?
        };
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let (u, v) = (x.get(r, c), y.get(c, r));
                diff = diff.max((u - v).abs());
                scale = scale.max(u.abs()).max(v.abs());
            }
        }
        Ok((diff, scale))
    })?;
    let (diff, scale) = parts
        .values()
        .fold((0.0f64, 0.0f64), |(d, s), &(x, y)| (d.max(x), s.max(y)));
    Ok(if scale > 0.0 { diff / scale } else { 0.0 })
}

/// Relative asymmetry tolerated before a matrix counts as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Checks the adjacency contract: square, symmetric, zero diagonal,
/// non-negative, finite.
pub fn check_adjacency(pool: &Pool, a: &MatrixHandle) -> Result<()> {
    require_square(a)?;
    let asym = asymmetry(pool, a)?;
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(format!(
            "`{}` has relative asymmetry {asym:e}",
            a.meta.name
        )));
    }
    pool.run_stage(TaskSet::blocks("check_adjacency", a), |ctx, id| {
        let x = ctx.read(a, *id)?;
        let (r0, c0) = (a.meta.row_offset(id.row), a.meta.col_offset(id.col));
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let v = x.get(r, c);
                if v < 0.0 {
                    return Err(Error::InvalidAdjacency(format!(
                        "negative weight {v} at ({}, {})",
                        r0 + r,
                        c0 + c
                    )));
                }
                if r0 + r == c0 + c && v != 0.0 {
                    return Err(Error::InvalidAdjacency(format!(
                        "self-edge of weight {v} at node {}",
                        r0 + r
                    )));
                }
            }
        }
        Ok(())
    })?;
    Ok(())
}
