//! Named random substreams derived from one top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

/// Generator for the stream `name`; unrelated names give independent streams.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, name))
}

/// A 64-bit seed for the stream `name`, for APIs that take a plain seed.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let d = digest(seed, name);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
