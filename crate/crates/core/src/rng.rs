//! Counter-based keyed randomness.
//!
//! The sign attached to an edge is a pure function of `(seed, projection, u, v)`,
//! so it does not depend on block size, task order, or worker count.

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Key for the random signs of one projection column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeProjectionSeed {
    pub seed: u64,
    pub projection: u64,
}

impl EdgeProjectionSeed {
    pub fn new(seed: u64, projection: u64) -> Self {
        EdgeProjectionSeed { seed, projection }
    }

    /// 64 random bits for the undirected edge `{u, v}`; argument order does not matter.
    #[inline]
    pub fn word(&self, u: usize, v: usize) -> u64 {
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        let mut h = mix64(self.seed.wrapping_add(GOLDEN));
        h = mix64(h ^ self.projection.wrapping_mul(GOLDEN));
        h = mix64(h ^ (lo as u64));
        mix64(h ^ (hi as u64).rotate_left(32))
    }

    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(&self, u: usize, v: usize) -> f64 {
        if self.word(u, v) >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}
