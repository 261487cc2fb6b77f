//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed from a parent seed plus a label, never from global state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Child seed for a named sub-stream (entry id, step index, ...).
pub fn derive(parent: u64, label: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn for_entry(run_seed: u64, entry_id: &str) -> u64 {
    derive(run_seed, entry_id.as_bytes())
}

pub fn for_step(recipe_seed: u64, step_index: usize) -> u64 {
    derive(recipe_seed, format!("step{step_index}").as_bytes())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
