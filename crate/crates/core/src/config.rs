use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingParams;
use crate::error::{Error, Result};
use crate::sdd::ChainForm;
use crate::synthgen::default_block_size;

pub const SCRATCH_ENV: &str = "CADDELAG_SCRATCH";

/// Parameters shared by every pipeline command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scratch: PathBuf,
    pub workers: usize,
    /// `None` picks `ceil(sqrt(n))`.
    pub block_size: Option<usize>,
    pub eps_rp: f64,
    pub delta: f64,
    pub d: usize,
    pub seed: u64,
    pub top: usize,
    pub form: ChainForm,
}

impl RunConfig {
    /// `q = ceil(ln(1/delta)) = 10` with `delta = 5e-5`.
    pub const DEFAULT_DELTA: f64 = 5e-5;
    pub const DEFAULT_EPS: f64 = 1e-3;
    pub const DEFAULT_D: usize = 3;
    pub const DEFAULT_TOP: usize = 100;

    pub fn new(scratch: impl Into<PathBuf>) -> Self {
        RunConfig {
            scratch: scratch.into(),
            workers: 1,
            block_size: None,
            eps_rp: Self::DEFAULT_EPS,
            delta: Self::DEFAULT_DELTA,
            d: Self::DEFAULT_D,
            seed: 0,
            top: Self::DEFAULT_TOP,
            form: ChainForm::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.workers == 0 {
            return bad("worker count must be at least 1".into());
        }
        if self.block_size == Some(0) {
            return bad("block size must be at least 1".into());
        }
        if !(self.eps_rp > 0.0 && self.eps_rp < 1.0) {
            return bad(format!("projection accuracy must lie in (0, 1), got {}", self.eps_rp));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("solver accuracy must lie in (0, 1), got {}", self.delta));
        }
        if self.d == 0 {
            return bad("chain length must be at least 1".into());
        }
        if self.top == 0 {
            return bad("top must be at least 1".into());
        }
        Ok(())
    }

    pub fn block_size_for(&self, n: usize) -> usize {
        self.block_size.unwrap_or_else(|| default_block_size(n))
    }

    pub fn embedding_params(&self) -> EmbeddingParams {
        EmbeddingParams {
            eps_rp: self.eps_rp,
            delta: self.delta,
            d: self.d,
            seed: self.seed,
            form: self.form,
            k_override: None,
        }
    }
}
