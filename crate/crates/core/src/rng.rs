//! Counter-based splittable randomness.
//!
//! A [`RngStream`] is identified by a `(seed, stream)` pair. Identical pairs
//! reproduce identical draw sequences; distinct stream ids give independent
//! streams of the same seed. Parallel loops split one child stream per work
//! item, so results do not depend on thread scheduling.

use rand::rngs::ChaCha12Rng;
use rand::{Rng, SeedableRng, TryRng};
use std::convert::Infallible;

/// A seeded, stream-addressed random number generator.
///
/// Backed by ChaCha12, which is counter-based: the `(seed, stream)` pair
/// fully determines the output sequence.
#[derive(Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl Clone for RngStream {
    fn clone(&self) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(self.seed);
        inner.set_stream(self.stream);
        inner.set_word_pos(self.inner.get_word_pos());
        RngStream { seed: self.seed, stream: self.stream, inner }
    }
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream { seed, stream, inner }
    }

    /// Stream 0 of the given seed.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derive an independent child stream for work item `label`.
    ///
    /// The child starts at position zero of its own stream, so splitting is
    /// deterministic regardless of how much this stream has been consumed.
    pub fn split(&self, label: u64) -> RngStream {
        let child = splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x9e37_79b9)));
        RngStream::new(self.seed, child)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits, the standard open-interval construction.
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Rejection-free Lemire reduction is overkill at desk scale; modulo
        // bias is < 2^-40 for n < 2^24.
        (self.inner.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1: f64 = self.uniform().max(f64::MIN_POSITIVE);
        let u2: f64 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

// The core trait comes through the blanket impl for infallible sources.
impl TryRng for RngStream {
    type Error = Infallible;

    fn try_next_u32(&mut self) -> Result<u32, Infallible> {
        Ok(self.inner.next_u32())
    }

    fn try_next_u64(&mut self) -> Result<u64, Infallible> {
        Ok(self.inner.next_u64())
    }

    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> Result<(), Infallible> {
        self.inner.fill_bytes(dst);
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
