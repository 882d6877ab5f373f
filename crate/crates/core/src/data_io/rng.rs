use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Derives independent random streams from a run seed.
///
/// A stream is identified by `(seed, label, counter)`; the triple is hashed
/// with SHA-256 into a ChaCha20 key, so streams are stable across runs and
/// unrelated labels never share state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, label: &str, counter: u64) -> StreamRng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update(counter.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha20Rng::from_seed(key)
    }

    /// Child seed for handing to a component that takes a bare `u64`.
    pub fn derive_seed(&self, label: &str, counter: u64) -> u64 {
        use rand::RngCore;
        self.stream(label, counter).next_u64()
    }
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut StreamRng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// `n` standard normal draws.
pub fn normals(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
