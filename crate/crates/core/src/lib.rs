//! Out-of-core commute-time embeddings and anomaly scoring for pairs of dense
//! weighted graphs.
//!
//! Matrices live on disk as immutable square tiles ([`blockstore`]). Every
//! operation ([`blockops`]) is a stage of independent per-tile tasks run by a
//! fixed worker pool ([`runtime`]). On top of that sit a Laplacian solver built
//! from a precomputed inverse chain ([`sdd`]), random-projection commute-time
//! embeddings ([`embedding`]) and the edge/node anomaly scores between two
//! graph snapshots ([`anomaly`]). [`oracle`] holds the dense in-memory
//! reference used for verification.

pub mod anomaly;
pub mod blockops;
pub mod blockstore;
pub mod config;
pub mod embedding;
pub mod error;
pub mod ingest;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod runtime;
pub mod sdd;
pub mod synthgen;

pub use error::{Error, Result};
