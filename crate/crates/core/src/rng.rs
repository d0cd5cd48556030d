//! Named random sub-streams derived from a single root seed.
//!
//! Every stage draws from its own stream (`benchmark`, `teacher.3`,
//! `invert.1`, `fuse.0.2`, `distill.t1`, ...) so stages can be rerun or
//! skipped without perturbing the randomness seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn substream(root: u64, name: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name))
}

pub fn from_seed(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}
