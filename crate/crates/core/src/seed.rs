//! Stable seed derivation.
//!
//! Seeds for every random draw are derived from the master seed and a path of labels
//! (scene id, variant, agent, purpose) through SHA-256, so the value for one entity never
//! depends on how many other scenes or agents exist.

use sha2::{Digest, Sha256};

#[derive(Clone)]
pub struct SeedPath {
    hasher: Sha256,
}

impl SeedPath {
    pub fn new(master: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"trafficforge-seed-v1");
        hasher.update(master.to_le_bytes());
        Self { hasher }
    }

    pub fn str(mut self, s: &str) -> Self {
        self.hasher.update((s.len() as u64).to_le_bytes());
        self.hasher.update(s.as_bytes());
        self
    }

    pub fn int(mut self, v: i64) -> Self {
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn finish(self) -> u64 {
        let digest = self.hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

/// Seed for `(master, scene, variant, agent, purpose)`.
pub fn agent_seed(master: u64, scene_id: &str, variant: usize, agent_id: i64, purpose: &str) -> u64 {
    SeedPath::new(master)
        .str(scene_id)
        .int(variant as i64)
        .int(agent_id)
        .str(purpose)
        .finish()
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
