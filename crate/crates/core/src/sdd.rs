//! Solver for symmetric diagonally dominant systems `M x = b` with
//! `M = D - A`, `A >= 0`.
//!
//! The inverse of `I - S` (`S = D^{-1/2} A D^{-1/2}`) is approximated by a
//! finite chain of polynomials in `S, S^2, S^4, ...`, precomputed once as two
//! block matrices `P1 ~ M^{-1}` and `P2 = P1 M`. A short Richardson loop then
//! refines `P1 b` using only matrix-vector products.
//!
//! Two chain shapes are available:
//!
//! * [`ChainForm::Product`]: `(I+S)(I+S^2)...(I+S^{2^{d-1}})`. Its error
//!   operator is `S^{2^d}`, which is the identity on the `-1` eigenvector of
//!   a bipartite graph while the chain itself annihilates that vector, so the
//!   iteration can never recover it.
//! * [`ChainForm::Halved`] (default): `Z_d = I`,
//!   `Z_k = (I + (I+S_k)^2 Z_{k+1}) / 2` with `S_k = S^{2^k}`. Its error on an
//!   eigenvalue `l` is `l^{2^d} prod_k (1 + l^{2^k}) / 2`, which vanishes at
//!   `l = -1` and is smaller than the product form everywhere else.

use std::fs;
use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::blockops::{self, DiagonalMatrix, Panel};
use crate::blockstore::{self, Block, MatrixHandle, Scratch};
use crate::error::{Error, Result};
use crate::runtime::{Pool, TaskSet};

/// Absolute slack allowed when checking `d_i >= sum_j a_ij`.
pub const DOMINANCE_TOL: f64 = 1e-9;

pub const CHAIN_FILE: &str = "chain.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainForm {
    #[default]
    Halved,
    Product,
}

impl std::str::FromStr for ChainForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "halved" => Ok(ChainForm::Halved),
            "product" => Ok(ChainForm::Product),
            other => Err(Error::InvalidParameter(format!(
                "unknown chain form `{other}` (expected `halved` or `product`)"
            ))),
        }
    }
}

/// Number of Richardson steps `ceil(ln(1/delta))`.
pub fn richardson_steps(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "solver accuracy must lie in (0, 1), got {delta}"
        )));
    }
    Ok((1.0 / delta).ln().ceil() as usize)
}

/// Anything that can be applied to a panel of column vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Panel) -> Result<Panel>;
}

/// A stored square matrix applied through pool stages.
#[derive(Debug, Clone)]
pub struct BlockOperator<'p> {
    pub pool: &'p Pool,
    pub matrix: MatrixHandle,
}

impl<'p> BlockOperator<'p> {
    pub fn new(pool: &'p Pool, matrix: MatrixHandle) -> Self {
        BlockOperator { pool, matrix }
    }
}

impl LinearOperator for BlockOperator<'_> {
    fn dim(&self) -> usize {
        self.matrix.meta.n_rows
    }

    fn apply(&self, x: &Panel) -> Result<Panel> {
        blockops::matmul_panel(self.pool, &self.matrix, x)
    }
}

/// `M = D - A` split into its diagonal and (negated) off-diagonal parts.
#[derive(Debug, Clone)]
pub struct SddDecomposition {
    pub dvec: DiagonalMatrix,
    pub a: MatrixHandle,
}

impl SddDecomposition {
    /// Splits a stored SDD matrix, writing `A` as a new matrix.
    pub fn from_matrix(pool: &Pool, scratch: &Scratch, m: &MatrixHandle) -> Result<Self> {
        if !m.meta.is_square() {
            return Err(Error::Dimension(format!("`{}` is not square", m.meta.name)));
        }
        let asym = blockops::asymmetry(pool, m)?;
        if asym > blockops::SYMMETRY_TOL {
            return Err(Error::Asymmetric(format!(
                "`{}` has relative asymmetry {asym:e}",
                m.meta.name
            )));
        }
        let mut meta = m.meta.clone();
        meta.name = scratch.fresh_name("offdiag");
        meta.symmetric = true;
        let a = scratch.create(meta)?;
        let (parts, _) = pool.run_stage(TaskSet::blocks("sdd_split", m), |ctx, id| {
            let x = ctx.read(m, *id)?;
            let (r0, c0) = (m.meta.row_offset(id.row), m.meta.col_offset(id.col));
            let mut diag = Vec::new();
            let mut worst = 0.0f64;
            let out = Block::from_fn(x.rows(), x.cols(), |r, c| {
                let v = x.get(r, c);
                if r0 + r == c0 + c {
                    diag.push(v);
                    0.0
                } else {
                    worst = worst.max(v);
                    -v
                }
            });
            ctx.write(&a, *id, &out)?;
            Ok((diag, worst))
        })?;
        let n = m.meta.n_rows;
        let mut dvec = vec![0.0; n];
        for (id, (diag, worst)) in &parts {
            if *worst > 0.0 {
                return Err(Error::NotSdd(format!(
                    "positive off-diagonal entry {worst} in block {id}"
                )));
            }
            if id.row == id.col {
                let r0 = m.meta.row_offset(id.row);
                dvec[r0..r0 + diag.len()].copy_from_slice(diag);
            }
        }
        Self::from_parts(pool, DiagonalMatrix(dvec), a)
    }

    /// Wraps a known diagonal and adjacency, checking dominance row by row.
    pub fn from_parts(pool: &Pool, dvec: DiagonalMatrix, a: MatrixHandle) -> Result<Self> {
        if dvec.len() != a.meta.n_rows {
            return Err(Error::Dimension(format!(
                "diagonal of length {} for a {}-node matrix",
                dvec.len(),
                a.meta.n_rows
            )));
        }
        let sums = blockops::row_sums(pool, &a)?;
        for (i, (&d, &s)) in dvec.0.iter().zip(sums.iter()).enumerate() {
            if d < s - DOMINANCE_TOL {
                return Err(Error::NotSdd(format!(
                    "row {i}: diagonal {d} is below off-diagonal mass {s}"
                )));
            }
        }
        Ok(SddDecomposition { dvec, a })
    }

    pub fn n(&self) -> usize {
        self.dvec.len()
    }

    /// `S = D^{-1/2} A D^{-1/2}`.
    pub fn normalized(&self, pool: &Pool, scratch: &Scratch) -> Result<MatrixHandle> {
        let c = self.dvec.inv_sqrt();
        blockops::diag_scale(pool, scratch, &self.a, &c, &c, &scratch.fresh_name("s"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainInfo {
    pub d: usize,
    pub form: ChainForm,
    pub source: String,
    pub n: usize,
    pub block_size: usize,
    pub p1: String,
    pub p2: String,
}

/// Precomputed `P1 ~ M^{-1}` and `P2 = P1 M`.
#[derive(Debug, Clone)]
pub struct ChainPreconditioner {
    pub p1: MatrixHandle,
    pub p2: MatrixHandle,
    pub info: ChainInfo,
}

impl ChainPreconditioner {
    pub fn d(&self) -> usize {
        self.info.d
    }

    pub fn n(&self) -> usize {
        self.info.n
    }

    /// Reopens a chain stored under `<root>/<name>/`.
    pub fn open(root: &Path, name: &str) -> Result<Self> {
        let path = root.join(name).join(CHAIN_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let info: ChainInfo = serde_json::from_slice(&bytes)?;
        let p1 = blockstore::open_matrix(root, &info.p1)?;
        let p2 = blockstore::open_matrix(root, &info.p2)?;
        Ok(ChainPreconditioner { p1, p2, info })
    }

    pub fn estimate_solution(
        &self,
        pool: &Pool,
        b: &blockops::DenseVector,
        delta: f64,
    ) -> Result<blockops::DenseVector> {
        let y = self.estimate_solution_panel(pool, &Panel::from_column(b), delta)?;
        Ok(blockops::DenseVector(y.into_data()))
    }

    /// Richardson refinement for every column of `b` at once; each step
    /// streams `P2` from storage once for the whole panel.
    pub fn estimate_solution_panel(&self, pool: &Pool, b: &Panel, delta: f64) -> Result<Panel> {
        let q = richardson_steps(delta)?;
        let (p1, p2) = self.operators(pool);
        exact_solve_fast(&p1, &p2, b, q)
    }

    pub fn operators<'p>(&self, pool: &'p Pool) -> (BlockOperator<'p>, BlockOperator<'p>) {
        (
            BlockOperator::new(pool, self.p1.clone()),
            BlockOperator::new(pool, self.p2.clone()),
        )
    }
}

/// Validates `m` as SDD and builds its chain under `<root>/<name>/`.
pub fn chain_product(
    pool: &Pool,
    scratch: &Scratch,
    m: &MatrixHandle,
    d: usize,
    form: ChainForm,
    name: &str,
) -> Result<ChainPreconditioner> {
    let dec = SddDecomposition::from_matrix(pool, scratch, m)?;
    let pc = chain_from_decomposition(pool, scratch, &dec, m, d, form, name);
    blockstore::remove_matrix(dec.a)?;
    pc
}

/// Builds the chain from an already split system; `m` must equal `D - A`.
pub fn chain_from_decomposition(
    pool: &Pool,
    scratch: &Scratch,
    dec: &SddDecomposition,
    m: &MatrixHandle,
    d: usize,
    form: ChainForm,
    name: &str,
) -> Result<ChainPreconditioner> {
    if d == 0 {
        return Err(Error::InvalidParameter("chain length must be at least 1".into()));
    }
    let n = dec.n();
    if m.meta.n_rows != n || m.meta.block_size != dec.a.meta.block_size {
        return Err(Error::Dimension(format!(
            "system `{}` does not match its decomposition",
            m.meta.name
        )));
    }
    let fresh = |p: &str| scratch.fresh_name(p);
    let squarings = match form {
        ChainForm::Product => d - 1,
        ChainForm::Halved => d,
    };
    let mut powers = vec![dec.normalized(pool, scratch)?];
    for _ in 0..squarings {
        let last = powers.last().unwrap();
        let next = blockops::multiply(pool, scratch, last, last, &fresh("pow"))?;
        powers.push(next);
    }
    debug!("chain: {} powers of S for d = {d}", powers.len());

    let mut temps = Vec::new();
    let chain = match form {
        ChainForm::Product => {
            let mut acc = blockops::add_identity(pool, scratch, &powers[0], &fresh("chain"))?;
            for s in &powers[1..] {
                let factor = blockops::add_identity(pool, scratch, s, &fresh("factor"))?;
                let next = blockops::multiply(pool, scratch, &acc, &factor, &fresh("chain"))?;
                temps.push(std::mem::replace(&mut acc, next));
                temps.push(factor);
            }
            acc
        }
        ChainForm::Halved => {
            let mut z = blockops::lincomb(
                pool,
                scratch,
                &[(1.0, &powers[d - 1]), (0.5, &powers[d])],
                1.0,
                &fresh("chain"),
            )?;
            for k in (0..d - 1).rev() {
                let w = blockops::lincomb(
                    pool,
                    scratch,
                    &[(2.0, &powers[k]), (1.0, &powers[k + 1])],
                    1.0,
                    &fresh("factor"),
                )?;
                let wz = blockops::multiply(pool, scratch, &w, &z, &fresh("wz"))?;
                let next = blockops::lincomb(pool, scratch, &[(0.5, &wz)], 0.5, &fresh("chain"))?;
                temps.push(std::mem::replace(&mut z, next));
                temps.push(w);
                temps.push(wz);
            }
            z
        }
    };

    let c = dec.dvec.inv_sqrt();
    let p1_name = format!("{name}/p1");
    let p2_name = format!("{name}/p2");
    let mut p1 = blockops::diag_scale(pool, scratch, &chain, &c, &c, &p1_name)?;
    p1.meta.symmetric = true;
    let p2 = blockops::multiply(pool, scratch, &p1, m, &p2_name)?;

    temps.push(chain);
    temps.extend(powers);
    for t in temps {
        blockstore::remove_matrix(t)?;
    }

    let info = ChainInfo {
        d,
        form,
        source: m.meta.name.clone(),
        n,
        block_size: m.meta.block_size,
        p1: p1_name,
        p2: p2_name,
    };
    let path = scratch.root().join(name).join(CHAIN_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&info)?).map_err(|e| Error::io(&path, e))?;
    Ok(ChainPreconditioner { p1, p2, info })
}

fn check_rhs(what: &str, n: usize, b: &Panel) -> Result<()> {
    if b.rows() != n {
        return Err(Error::Dimension(format!(
            "{what}: right-hand side has {} rows, system has {n}",
            b.rows()
        )));
    }
    Ok(())
}

/// `y_{k+1} = y_k - P2 y_k + chi` from `y_1 = 0`; returns `y_q`.
pub fn exact_solve_fast<O: LinearOperator>(p1: &O, p2: &O, b: &Panel, q: usize) -> Result<Panel> {
    check_rhs("estimate_solution", p1.dim(), b)?;
    let chi = p1.apply(b)?;
    let mut y = Panel::zeros(b.rows(), b.cols());
    for _ in 1..q {
        let py = p2.apply(&y)?;
        y = richardson_update(&y, &py, &chi);
    }
    Ok(y)
}

/// Same recurrence started at `y_1 = chi` and run `q - 2` times; equals
/// [`exact_solve_fast`] bit for bit because its first step yields `chi`.
pub fn exact_solve_fast2<O: LinearOperator>(
    p1: &O,
    p2: &O,
    b: &Panel,
    q: usize,
) -> Result<Panel> {
    check_rhs("estimate_solution", p1.dim(), b)?;
    if q < 2 {
        return Ok(Panel::zeros(b.rows(), b.cols()));
    }
    let chi = p1.apply(b)?;
    let mut y = chi.clone();
    for _ in 0..q - 2 {
        let py = p2.apply(&y)?;
        y = richardson_update(&y, &py, &chi);
    }
    Ok(y)
}

fn richardson_update(y: &Panel, py: &Panel, chi: &Panel) -> Panel {
    let data = y
        .data()
        .iter()
        .zip(py.data())
        .zip(chi.data())
        .map(|((a, b), c)| a - b + c)
        .collect();
    Panel::from_vec(y.rows(), y.cols(), data).expect("shapes agree")
}

fn axpy_panel(y: &Panel, alpha: f64, x: &Panel) -> Panel {
    let data = y.data().iter().zip(x.data()).map(|(a, b)| a + alpha * b).collect();
    Panel::from_vec(y.rows(), y.cols(), data).expect("shapes agree")
}

/// The unprecomputed solver: every application of the chain is a sequence
/// of matrix-vector products with `S`.
#[derive(Debug, Clone)]
pub struct ReferenceSolver<O> {
    pub dinv_sqrt: DiagonalMatrix,
    /// `S = D^{-1/2} A D^{-1/2}`.
    pub s: O,
    /// `M = D - A`.
    pub m: O,
    pub d: usize,
    pub form: ChainForm,
}

impl<O: LinearOperator> ReferenceSolver<O> {
    pub fn new(dvec: &DiagonalMatrix, s: O, m: O, d: usize, form: ChainForm) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("chain length must be at least 1".into()));
        }
        if s.dim() != dvec.len() || m.dim() != dvec.len() {
            return Err(Error::Dimension("operators do not match the diagonal".into()));
        }
        Ok(ReferenceSolver {
            dinv_sqrt: dvec.inv_sqrt(),
            s,
            m,
            d,
            form,
        })
    }

    /// `S^{2^k} x`.
    fn power(&self, k: usize, x: &Panel) -> Result<Panel> {
        let mut y = x.clone();
        for _ in 0..1usize << k {
            y = self.s.apply(&y)?;
        }
        Ok(y)
    }

    fn halved(&self, k: usize, v: &Panel) -> Result<Panel> {
        if k == self.d {
            return Ok(v.clone());
        }
        let mut u = self.halved(k + 1, v)?;
        for _ in 0..2 {
            let su = self.power(k, &u)?;
            u = axpy_panel(&u, 1.0, &su);
        }
        let data = v.data().iter().zip(u.data()).map(|(a, b)| 0.5 * (a + b)).collect();
        Panel::from_vec(v.rows(), v.cols(), data)
    }

    /// The chain applied to `D^{-1/2} b`, without the closing `D^{-1/2}`.
    pub fn crude_solve(&self, b: &Panel) -> Result<Panel> {
        check_rhs("crude_solve", self.dinv_sqrt.len(), b)?;
        let c = b.scale_rows(&self.dinv_sqrt);
        match self.form {
            ChainForm::Product => {
                let mut y = c;
                for k in (0..self.d).rev() {
                    let sy = self.power(k, &y)?;
                    y = axpy_panel(&y, 1.0, &sy);
                }
                Ok(y)
            }
            ChainForm::Halved => self.halved(0, &c),
        }
    }

    /// Richardson refinement that re-runs the crude solve on every residual.
    pub fn exact_solve(&self, b: &Panel, delta: f64) -> Result<Panel> {
        let q = richardson_steps(delta)?;
        let chi = self.crude_solve(b)?.scale_rows(&self.dinv_sqrt);
        let mut y = Panel::zeros(b.rows(), b.cols());
        for _ in 1..q {
            let u = self.m.apply(&y)?;
            let u2 = self.crude_solve(&u)?.scale_rows(&self.dinv_sqrt);
            y = richardson_update(&y, &u2, &chi);
        }
        Ok(y)
    }
}

/// Reference solver over stored matrices; writes `S` to scratch.
pub fn block_reference_solver<'p>(
    pool: &'p Pool,
    scratch: &Scratch,
    dec: &SddDecomposition,
    m: &MatrixHandle,
    d: usize,
    form: ChainForm,
) -> Result<ReferenceSolver<BlockOperator<'p>>> {
    let s = dec.normalized(pool, scratch)?;
    ReferenceSolver::new(
        &dec.dvec,
        BlockOperator::new(pool, s),
        BlockOperator::new(pool, m.clone()),
        d,
        form,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockops::DenseVector;
    use crate::blockstore::{read_dense, write_dense, MatrixMeta};

    fn setup() -> (tempfile::TempDir, Scratch, Pool) {
        let dir = tempfile::tempdir().unwrap();
        let scratch = Scratch::open(dir.path()).unwrap();
        (dir, scratch, Pool::new(2).unwrap())
    }

    fn store(s: &Scratch, name: &str, n: usize, p: usize, v: &[f64]) -> MatrixHandle {
        write_dense(s.root(), MatrixMeta::square(name, n, p, true).unwrap(), v).unwrap()
    }

    #[test]
    fn steps_use_natural_log() {
        assert_eq!(richardson_steps(1e-3).unwrap(), 7);
        assert_eq!(richardson_steps(5e-5).unwrap(), 10);
        assert_eq!(richardson_steps(0.5).unwrap(), 1);
        assert!(richardson_steps(0.0).is_err());
        assert!(richardson_steps(1.0).is_err());
    }

    #[test]
    fn product_chain_two_node_by_hand() {
        // M = [[1,-1],[-1,1]], D = I, S = [[0,1],[1,0]]: P1 = I + S, P2 = (I+S) M = 0.
        let (_d, s, pool) = setup();
        let m = store(&s, "m", 2, 1, &[1.0, -1.0, -1.0, 1.0]);
        let pc = chain_product(&pool, &s, &m, 1, ChainForm::Product, "c").unwrap();
        assert_eq!(read_dense(&pc.p1).unwrap(), vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(read_dense(&pc.p2).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn halved_chain_two_node_by_hand() {
        // I + S + S^2/2 = [[1.5, 1], [1, 1.5]].
        let (_d, s, pool) = setup();
        let m = store(&s, "m", 2, 1, &[1.0, -1.0, -1.0, 1.0]);
        let pc = chain_product(&pool, &s, &m, 1, ChainForm::Halved, "c").unwrap();
        assert_eq!(read_dense(&pc.p1).unwrap(), vec![1.5, 1.0, 1.0, 1.5]);
        assert_eq!(read_dense(&pc.p2).unwrap(), vec![0.5, -0.5, -0.5, 0.5]);
    }

    #[test]
    fn multiply_counts() {
        let (_d, s, pool) = setup();
        let m = store(&s, "m", 3, 2, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]);
        for (form, d, want) in [
            (ChainForm::Product, 1, 1),
            (ChainForm::Product, 3, 5),
            (ChainForm::Halved, 1, 2),
            (ChainForm::Halved, 3, 6),
        ] {
            let mark = pool.history_len();
            chain_product(&pool, &s, &m, d, form, &format!("c-{form:?}-{d}")).unwrap();
            let got = pool
                .history_since(mark)
                .iter()
                .filter(|st| st.stage == "multiply")
                .count();
            assert_eq!(got, want, "{form:?} d={d}");
        }
    }

    #[test]
    fn rejects_non_sdd() {
        let (_d, s, pool) = setup();
        let weak = store(&s, "weak", 2, 1, &[1.0, -2.0, -2.0, 1.0]);
        assert!(matches!(
            chain_product(&pool, &s, &weak, 2, ChainForm::Halved, "c1"),
            Err(Error::NotSdd(_))
        ));
        let pos = store(&s, "pos", 2, 1, &[2.0, 1.0, 1.0, 2.0]);
        assert!(matches!(
            chain_product(&pool, &s, &pos, 2, ChainForm::Halved, "c2"),
            Err(Error::NotSdd(_))
        ));
        let asym = store(&s, "asym", 2, 1, &[2.0, -1.0, -0.5, 2.0]);
        assert!(matches!(
            chain_product(&pool, &s, &asym, 2, ChainForm::Halved, "c3"),
            Err(Error::Asymmetric(_))
        ));
        let ok = store(&s, "ok", 2, 1, &[2.0, -1.0, -1.0, 2.0]);
        assert!(chain_product(&pool, &s, &ok, 0, ChainForm::Halved, "c4").is_err());
    }

    #[test]
    fn zero_rhs_is_fixed_point() {
        let (_d, s, pool) = setup();
        let m = store(&s, "m", 2, 1, &[2.0, -1.0, -1.0, 2.0]);
        let pc = chain_product(&pool, &s, &m, 2, ChainForm::Halved, "c").unwrap();
        let y = pc.estimate_solution(&pool, &DenseVector::zeros(2), 1e-3).unwrap();
        assert_eq!(y.0, vec![0.0, 0.0]);
        let one = pc.estimate_solution(&pool, &DenseVector(vec![1.0, 0.0]), 0.5).unwrap();
        assert_eq!(one.0, vec![0.0, 0.0]);
    }

    #[test]
    fn chain_reopens_from_sidecar() {
        let (_d, s, pool) = setup();
        let m = store(&s, "m", 3, 2, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]);
        let pc = chain_product(&pool, &s, &m, 2, ChainForm::Product, "chain").unwrap();
        let back = ChainPreconditioner::open(s.root(), "chain").unwrap();
        assert_eq!(back.info, pc.info);
        assert_eq!(back.info.source, "m");
        assert_eq!(read_dense(&back.p2).unwrap(), read_dense(&pc.p2).unwrap());
    }

    #[test]
    fn crude_solve_with_diagonal_system() {
        let (_d, s, pool) = setup();
        let m = store(&s, "m", 2, 1, &[4.0, 0.0, 0.0, 9.0]);
        let dec = SddDecomposition::from_matrix(&pool, &s, &m).unwrap();
        for form in [ChainForm::Product, ChainForm::Halved] {
            let r = block_reference_solver(&pool, &s, &dec, &m, 1, form).unwrap();
            let y = r.crude_solve(&Panel::from_column(&[2.0, 3.0])).unwrap();
            assert_eq!(y.data(), &[1.0, 1.0]);
        }
    }
}
