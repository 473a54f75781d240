//! Hybrid classical/quantum classification of wafer defect maps.
//!
//! A small convolutional feature extractor (self-proliferating convolutions
//! with global-context attention) feeds an angle-encoded parametrized
//! quantum circuit, simulated exactly on a dense statevector. Circuit
//! parameters are trained with parameter-shift gradients.

pub mod analysis;
pub mod circuits;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gradients;
pub mod hybrid;
pub mod nn;
pub mod qstate;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator number `index` under `seed`. Draw `i` of a
/// parallel loop uses stream `i`, so results do not depend on scheduling.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
