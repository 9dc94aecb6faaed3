//! Unfolded ISTA networks with a learned orthogonal dictionary.
//!
//! The crate covers the whole pipeline for thresholding networks that
//! reconstruct signals `x = Φz` (with `z` sparse) from compressive
//! measurements `y = Ax`:
//!
//! - [`linalg`]: dense row-major matrices, spectral norm, Haar sampling,
//!   polar retraction.
//! - [`data`]: synthetic sparse data and IDX (MNIST) ingestion.
//! - [`ista`]: the classical iterative soft-thresholding solver.
//! - [`network`]: the `L`-layer unfolded network with a shared dictionary.
//! - [`train`]: reverse-mode gradients and SGD with momentum.
//! - [`bounds`]: perturbation constants, covering numbers, Dudley integral
//!   and the resulting generalization bounds.
//! - [`experiment`] and [`cli`]: reproducible runs, sweeps and file outputs.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod ista;
pub mod linalg;
pub mod network;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`. Distinct streams of the
/// same seed are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a tag into a seed (splitmix64 finalizer) to derive sub-seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
