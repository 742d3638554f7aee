//! Deterministic random substreams.
//!
//! Every random decision in a run draws from a stream keyed by
//! `(master seed, node id, purpose tag)`, so results do not depend on the
//! order nodes are visited in or on how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Node id used for streams that are not owned by a particular node.
pub const GLOBAL: u64 = u64::MAX;

pub fn substream(master_seed: u64, node: u64, tag: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(node.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
