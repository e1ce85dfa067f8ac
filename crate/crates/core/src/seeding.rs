//! Seed derivation.
//!
//! A master seed keys a ChaCha20 generator; every named consumer reads from
//! its own ChaCha stream (the 64-bit stream id of the cipher), so streams are
//! independent and reproducible in any language with a ChaCha20 implementation.
//! Sub-streams (per replicate, per model) are obtained by hashing the parent
//! stream id together with an index.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Named child streams of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    ClassGen,
    Trajectory,
    ModelPick,
    PlannerRestarts,
    Regret2Pac,
    Probes,
    Policies,
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::ClassGen => 1,
            Stream::Trajectory => 2,
            Stream::ModelPick => 3,
            Stream::PlannerRestarts => 4,
            Stream::Regret2Pac => 5,
            Stream::Probes => 6,
            Stream::Policies => 7,
        }
    }
}

pub fn stream(master: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(which.id());
    rng
}

/// Stream `which` specialised by an index, e.g. one stream per model or per replicate.
pub fn substream(master: u64, which: Stream, index: u64) -> StreamRng {
    let mut h = Sha256::new();
    h.update(which.id().to_le_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut id = [0u8; 8];
    id.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(u64::from_le_bytes(id));
    rng
}
