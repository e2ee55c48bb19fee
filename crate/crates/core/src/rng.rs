//! Counter-based generators keyed by `(seed, epoch, stream)`.
//!
//! The key is the ChaCha key itself and the stream tag selects the ChaCha
//! stream, so every `(seed, epoch, stream)` triple addresses an independent
//! keystream without any sequential state shared between epochs. All draws go
//! through `u64` so results do not depend on the platform's pointer width.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KEY_DOMAIN: &[u8; 8] = b"mscplan1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Dataset permutation for the epoch.
    Permutation,
    /// Shared resolution draws (synchronized mode).
    Shapes,
    /// Per-rank resolution draws (independent mode).
    Rank(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Permutation => 0,
            Stream::Shapes => 1,
            Stream::Rank(r) => 2 + u64::from(r),
        }
    }
}

pub fn generator(seed: u64, epoch: u32, stream: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(KEY_DOMAIN);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream.id());
    rng
}

/// Uniform draw from `0..n`.
pub fn below<R: Rng>(rng: &mut R, n: u64) -> u64 {
    rng.gen_range(0..n)
}

/// Uniform random permutation of `0..n` (Fisher-Yates).
pub fn permutation<R: Rng>(rng: &mut R, n: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).collect();
    for i in (1..v.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        v.swap(i, j);
    }
    v
}
