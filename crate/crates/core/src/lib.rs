//! Functional-data clustering with a functional autoencoder.
//!
//! The crate is organised around the stages of the method:
//!
//! * [`fdata`]: basis systems, smoothing of noisy sample paths, standardization.
//! * [`metrics`]: Hilbert, elastic (square-root velocity) and DTW distances and
//!   the sparse similarity graph built from them.
//! * [`network`]: the functional autoencoder with hand-written backpropagation.
//! * [`cvxclust`]: the convex-clustering solution path and the merge hierarchy.
//! * [`pipeline`]: the alternating train/cluster loop and external scores.
//! * [`datagen`]: simulated manifold-valued datasets and random time warps.
//! * [`io`]: CSV and JSON formats used by the command line tool.

pub mod error;
pub mod fdata;
pub mod metrics;
pub mod cvxclust;
pub mod network;
pub mod datagen;
pub mod pipeline;
pub mod io;

pub use error::{FaeError, Result};

/// Seeded generator used for every random choice in the crate.
pub type FaeRng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> FaeRng {
    <FaeRng as rand::SeedableRng>::seed_from_u64(seed)
}
