use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seeded, platform-independent random stream.
///
/// Backed by ChaCha8, so a given seed yields the same draws everywhere.
/// Streams are passed explicitly; there is no global generator.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `label`. Does not advance `self`.
    pub fn fork(&self, label: u64) -> Self {
        Self::new(splitmix64(
            self.seed ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D)),
        ))
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi)`.
    pub fn below(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..hi)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn forks_differ_from_parent_and_each_other() {
        let root = RngStream::new(1);
        let mut a = root.fork(0);
        let mut b = root.fork(1);
        let mut r = root.clone();
        let (x, y, z) = (a.gaussian(), b.gaussian(), r.gaussian());
        assert!(x != y && y != z && x != z);
        assert_eq!(root.fork(0).gaussian(), x);
    }
}
