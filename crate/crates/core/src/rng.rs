//! Splittable, reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `SHA-256(root_seed || path)`,
//! where `path` is the slash-joined chain of labels from the root. A child's
//! key depends only on the root seed and its path, never on how much of the
//! parent has been consumed, so `(seed, "learner/erm")` names the same
//! sequence in every process.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: String,
    inner: ChaCha8Rng,
}

impl RngStream {
    /// Root stream for a run.
    pub fn root(seed: u64) -> Self {
        Self::keyed(seed, String::new())
    }

    /// Independent child stream identified by `label` under this stream's path.
    pub fn child(&self, label: &str) -> Self {
        let path = if self.stream_id.is_empty() {
            label.to_string()
        } else {
            format!("{}/{}", self.stream_id, label)
        };
        Self::keyed(self.seed, path)
    }

    /// Child stream keyed by an integer, e.g. a pair index or seed offset.
    pub fn child_indexed(&self, label: &str, index: u64) -> Self {
        self.child(&format!("{label}#{index}"))
    }

    fn keyed(seed: u64, stream_id: String) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(stream_id.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        Self {
            seed,
            stream_id,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Draw from a discrete distribution given unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // rounding slack lands on the last positive weight
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_reproducible_and_independent_of_parent_state() {
        let root = RngStream::root(7);
        let mut advanced = root.clone();
        for _ in 0..10 {
            advanced.next_u64();
        }
        let mut a = root.child("actor");
        let mut b = advanced.child("actor");
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn sibling_streams_differ() {
        let root = RngStream::root(7);
        let mut a = root.child("actor");
        let mut b = root.child("learner");
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
        assert_eq!(root.child("actor").child("x").stream_id(), "actor/x");
    }

    #[test]
    fn different_roots_differ() {
        let mut a = RngStream::root(1).child("oracle");
        let mut b = RngStream::root(2).child("oracle");
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn categorical_respects_zero_weights() {
        let mut r = RngStream::root(3);
        for _ in 0..1000 {
            let i = r.categorical(&[0.0, 1.0, 0.0, 2.0]);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn categorical_frequencies() {
        let mut r = RngStream::root(11);
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            counts[r.categorical(&[1.0, 2.0, 1.0])] += 1;
        }
        let f1 = counts[1] as f64 / n as f64;
        assert!((f1 - 0.5).abs() < 0.015, "{f1}");
    }
}
