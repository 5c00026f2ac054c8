//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream keyed by the
//! run seed, a purpose tag, and a `(client, round)` pair. Two streams never
//! share state, so results do not depend on which thread runs a client or in
//! what order clients are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamKind {
    Init = 1,
    Generator = 2,
    Heterogeneity = 3,
    Split = 4,
    Shuffle = 5,
    Participation = 6,
}

/// Returns the stream for `(seed, kind, client, round)`.
pub fn stream(seed: u64, kind: StreamKind, client: u32, round: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = kind as u8;
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((u64::from(client) << 32) | u64::from(round));
    rng
}
