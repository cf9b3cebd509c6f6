//! Immutable, block-partitioned matrix storage on a shared filesystem.
//!
//! A matrix lives in its own directory:
//!
//! ```text
//! <root>/<name>/meta.json      MatrixMeta as UTF-8 JSON
//! <root>/<name>/r{row}_c{col}.blk
//! ```
//!
//! Block file layout (all integers little-endian):
//!
//! ```text
//! | "CDLG" | version u16 | rows u32 | cols u32 | crc32(payload) u32 | payload: rows*cols f64 LE, row-major |
//! ```
//!
//! Blocks are written exactly once. Edge blocks are ragged when the matrix
//! dimension is not a multiple of the block size; nothing is padded.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CDLG";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;
pub const META_FILE: &str = "meta.json";

/// Position of a block in the block grid. Ordering is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub row: usize,
    pub col: usize,
}

impl BlockId {
    pub const fn new(row: usize, col: usize) -> Self {
        BlockId { row, col }
    }

    pub fn file_name(&self) -> String {
        format!("r{}_c{}.blk", self.row, self.col)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// A dense row-major tile of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Block {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "block of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Block { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Block {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Block { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Block {
        Block::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.values.len() * 8) as u64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Parses a block file image; the error string names the first defect.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Block, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("file is {} bytes, shorter than the header", bytes.len()));
        }
        if bytes[0..4] != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != rows * cols * 8 {
            return Err(format!(
                "payload is {} bytes, header says {rows}x{cols}",
                payload.len()
            ));
        }
        if crc32fast::hash(payload) != crc {
            return Err("checksum mismatch".into());
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Block { rows, cols, values })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub name: String,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Side `p` of a full block along the row dimension.
    pub block_size: usize,
    /// Block width along the column dimension; equals `block_size` for
    /// square tilings.
    pub col_block_size: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub symmetric: bool,
}

impl MatrixMeta {
    pub fn new(
        name: impl Into<String>,
        n_rows: usize,
        n_cols: usize,
        block_size: usize,
        col_block_size: usize,
        symmetric: bool,
    ) -> Result<Self> {
        if block_size == 0 || col_block_size == 0 {
            return Err(Error::Meta("block size must be at least 1".into()));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Meta("matrix dimensions must be positive".into()));
        }
        if symmetric && n_rows != n_cols {
            return Err(Error::Meta("a symmetric matrix must be square".into()));
        }
        Ok(MatrixMeta {
            name: name.into(),
            n_rows,
            n_cols,
            block_size,
            col_block_size,
            block_rows: n_rows.div_ceil(block_size),
            block_cols: n_cols.div_ceil(col_block_size),
            symmetric,
        })
    }

    /// Square `n x n` tiling with `p x p` blocks.
    pub fn square(name: impl Into<String>, n: usize, p: usize, symmetric: bool) -> Result<Self> {
        Self::new(name, n, n, p, p, symmetric)
    }

    pub fn check_consistent(&self) -> Result<()> {
        let expect = MatrixMeta::new(
            self.name.clone(),
            self.n_rows,
            self.n_cols,
            self.block_size,
            self.col_block_size,
            self.symmetric,
        )?;
        if expect != *self {
            return Err(Error::Meta(format!(
                "block grid {}x{} does not match dimensions {}x{} with block size {}x{}",
                self.block_rows, self.block_cols, self.n_rows, self.n_cols, self.block_size,
                self.col_block_size
            )));
        }
        Ok(())
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols && self.block_size == self.col_block_size
    }

    /// Rows in block-row `i` (ragged at the bottom edge).
    pub fn rows_in(&self, i: usize) -> usize {
        (self.n_rows - i * self.block_size).min(self.block_size)
    }

    pub fn cols_in(&self, j: usize) -> usize {
        (self.n_cols - j * self.col_block_size).min(self.col_block_size)
    }

    pub fn row_offset(&self, i: usize) -> usize {
        i * self.block_size
    }

    pub fn col_offset(&self, j: usize) -> usize {
        j * self.col_block_size
    }

    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut ids = Vec::with_capacity(self.block_rows * self.block_cols);
        for row in 0..self.block_rows {
            for col in 0..self.block_cols {
                ids.push(BlockId { row, col });
            }
        }
        ids
    }

    pub fn contains(&self, id: BlockId) -> bool {
        id.row < self.block_rows && id.col < self.block_cols
    }

    pub fn byte_size(&self) -> u64 {
        (self.n_rows * self.n_cols * 8) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixHandle {
    pub meta: MatrixMeta,
    pub root: PathBuf,
}

impl MatrixHandle {
    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn block_path(&self, id: BlockId) -> PathBuf {
        self.root.join(id.file_name())
    }

    fn check_id(&self, id: BlockId) -> Result<()> {
        if self.meta.contains(id) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                matrix: self.meta.name.clone(),
                id,
                block_rows: self.meta.block_rows,
                block_cols: self.meta.block_cols,
            })
        }
    }

    pub fn expected_dims(&self, id: BlockId) -> (usize, usize) {
        (self.meta.rows_in(id.row), self.meta.cols_in(id.col))
    }
}

/// Creates `<root>/<meta.name>/` and writes its metadata. Fails if a matrix
/// of the same name already exists.
pub fn create_matrix(root: &Path, meta: MatrixMeta) -> Result<MatrixHandle> {
    meta.check_consistent()?;
    let dir = root.join(&meta.name);
    if let Some(parent) = dir.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match fs::create_dir(&dir) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::AlreadyExists => {
            return Err(Error::MatrixExists(meta.name.clone()))
        }
        Err(e) => return Err(Error::io(&dir, e)),
    }
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_vec_pretty(&meta)?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(MatrixHandle { meta, root: dir })
}

pub fn open_matrix(root: &Path, name: &str) -> Result<MatrixHandle> {
    let dir = root.join(name);
    let meta_path = dir.join(META_FILE);
    let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MatrixMeta = serde_json::from_slice(&bytes)?;
    meta.check_consistent()?;
    Ok(MatrixHandle { meta, root: dir })
}

/// Deletes a matrix directory. Blocks are immutable, but scratch matrices
/// are discarded as a whole once no stage needs them.
pub fn remove_matrix(h: MatrixHandle) -> Result<()> {
    fs::remove_dir_all(&h.root).map_err(|e| Error::io(&h.root, e))
}

pub fn write_block(h: &MatrixHandle, id: BlockId, b: &Block) -> Result<()> {
    h.check_id(id)?;
    let (rows, cols) = h.expected_dims(id);
    if b.rows != rows || b.cols != cols {
        return Err(Error::Dimension(format!(
            "block {id} of `{}` must be {rows}x{cols}, got {}x{}",
            h.meta.name, b.rows, b.cols
        )));
    }
    if !b.is_finite() {
        return Err(Error::NonFinite(format!(
            "block {id} of `{}` contains NaN or infinity",
            h.meta.name
        )));
    }
    let path = h.block_path(id);
    let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == ErrorKind::AlreadyExists => {
            return Err(Error::BlockExists {
                matrix: h.meta.name.clone(),
                id,
            })
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    file.write_all(&b.encode()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_block(h: &MatrixHandle, id: BlockId) -> Result<Block> {
    h.check_id(id)?;
    let path = h.block_path(id);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return Err(Error::MissingBlock {
                matrix: h.meta.name.clone(),
                id,
            })
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let block = Block::decode(&bytes).map_err(|reason| Error::CorruptBlock {
        matrix: h.meta.name.clone(),
        id,
        reason,
    })?;
    let (rows, cols) = h.expected_dims(id);
    if block.rows != rows || block.cols != cols {
        return Err(Error::CorruptBlock {
            matrix: h.meta.name.clone(),
            id,
            reason: format!("stored as {}x{}, expected {rows}x{cols}", block.rows, block.cols),
        });
    }
    Ok(block)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub missing: Vec<BlockId>,
    pub checksum_failures: Vec<BlockId>,
    /// Blocks that decode but disagree with the metadata (shape, magic,
    /// version, non-finite values).
    pub inconsistent: Vec<(BlockId, String)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.checksum_failures.is_empty() && self.inconsistent.is_empty()
    }
}

/// Checks every block slot. Never fails; problems land in the report.
pub fn validate(h: &MatrixHandle) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = h.meta.check_consistent() {
        report.inconsistent.push((BlockId::new(0, 0), e.to_string()));
        return report;
    }
    for id in h.meta.block_ids() {
        match read_block(h, id) {
            Ok(b) if !b.is_finite() => report
                .inconsistent
                .push((id, "contains non-finite values".into())),
            Ok(_) => {}
            Err(Error::MissingBlock { .. }) => report.missing.push(id),
            Err(Error::CorruptBlock { reason, .. }) if reason == "checksum mismatch" => {
                report.checksum_failures.push(id)
            }
            Err(e) => report.inconsistent.push((id, e.to_string())),
        }
    }
    report
}

/// Assembles the whole matrix in memory, row-major. Only for small
/// matrices (tests, the dense oracle, embeddings).
pub fn read_dense(h: &MatrixHandle) -> Result<Vec<f64>> {
    let m = &h.meta;
    let mut out = vec![0.0; m.n_rows * m.n_cols];
    for id in m.block_ids() {
        let b = read_block(h, id)?;
        let (r0, c0) = (m.row_offset(id.row), m.col_offset(id.col));
        for r in 0..b.rows {
            let dst = (r0 + r) * m.n_cols + c0;
            out[dst..dst + b.cols].copy_from_slice(b.row(r));
        }
    }
    Ok(out)
}

/// Writes a row-major dense matrix blockwise into a new matrix.
pub fn write_dense(root: &Path, meta: MatrixMeta, values: &[f64]) -> Result<MatrixHandle> {
    if values.len() != meta.n_rows * meta.n_cols {
        return Err(Error::Dimension(format!(
            "{} values for a {}x{} matrix",
            values.len(),
            meta.n_rows,
            meta.n_cols
        )));
    }
    let n_cols = meta.n_cols;
    let h = create_matrix(root, meta)?;
    for id in h.meta.block_ids() {
        let (rows, cols) = h.expected_dims(id);
        let (r0, c0) = (h.meta.row_offset(id.row), h.meta.col_offset(id.col));
        let b = Block::from_fn(rows, cols, |r, c| values[(r0 + r) * n_cols + c0 + c]);
        write_block(&h, id, &b)?;
    }
    Ok(h)
}

/// A store root plus a generator of collision-free scratch names.
#[derive(Debug)]
pub struct Scratch {
    root: PathBuf,
    counter: AtomicU64,
}

impl Scratch {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Scratch {
            root,
            counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// A name under `tmp/` that no existing matrix uses.
    pub fn fresh_name(&self, prefix: &str) -> String {
        loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let name = format!("tmp/{}-{prefix}-{n}", std::process::id());
            if !self.root.join(&name).exists() {
                return name;
            }
        }
    }

    pub fn create(&self, meta: MatrixMeta) -> Result<MatrixHandle> {
        create_matrix(&self.root, meta)
    }

    pub fn open_matrix(&self, name: &str) -> Result<MatrixHandle> {
        open_matrix(&self.root, name)
    }
}
