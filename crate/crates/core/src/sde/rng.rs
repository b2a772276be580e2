//! Counter-based random streams.
//!
//! A stream is a ChaCha8 key derived from `(master_seed, stream_index)`;
//! path `i` reads ChaCha stream number `i` under that key, so every path is
//! reproducible regardless of which worker simulates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    key: [u8; 32],
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"heatmc/stream");
        h.update(master_seed.to_le_bytes());
        h.update(stream_index.to_le_bytes());
        Self {
            master_seed,
            stream_index,
            key: h.finalize().into(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// An independent stream labelled by `tag` (e.g. one per experiment arm).
    pub fn substream(&self, tag: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(tag.to_le_bytes());
        Self {
            master_seed: self.master_seed,
            stream_index: self.stream_index,
            key: h.finalize().into(),
        }
    }

    /// Generator for work item `path`.
    pub fn path_rng(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(path);
        rng
    }
}

/// Fills `out` with independent `N(0, variance)` draws.
pub(crate) fn fill_normals(rng: &mut ChaCha8Rng, variance: f64, out: &mut [f64]) {
    let s = variance.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = s * z;
    }
}
