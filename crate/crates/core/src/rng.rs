//! Seeded random streams.
//!
//! A [`NoiseStream`] is owned by the training coordinator and hands out one
//! [`DrawKey`] per sampling event. A key opens independent ChaCha8
//! substreams by index, so the draws of filter group `j` depend only on the
//! key and `j`, never on how many other groups exist.
//!
//! Gaussian variates use the Marsaglia polar method on 53-bit uniforms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Coordinator-side sequence of draw keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    counter: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn next_key(&mut self) -> DrawKey {
        let key = DrawKey(mix64(self.seed ^ mix64(self.counter)));
        self.counter += 1;
        key
    }

    /// Number of keys handed out so far.
    pub fn position(&self) -> u64 {
        self.counter
    }
}

/// Seed material for one sampling event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrawKey(u64);

impl DrawKey {
    pub fn from_raw(raw: u64) -> Self {
        Self(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// A distinct key derived from this one, e.g. per Monte-Carlo sample.
    pub fn child(self, index: u64) -> DrawKey {
        DrawKey(mix64(self.0 ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// ChaCha8 generator on substream `index` of this key.
    pub fn rng(self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// Standard normal sampler on substream `index`.
    pub fn normal(self, index: u64) -> StdNormal<ChaCha8Rng> {
        StdNormal::new(self.rng(index))
    }
}

/// Uniform in `[0, 1)` with 53 random bits.
pub fn uniform01<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variates by the polar method; the second variate of each
/// accepted pair is cached.
#[derive(Debug, Clone)]
pub struct StdNormal<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> StdNormal<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * uniform01(&mut self.rng) - 1.0;
            let v = 2.0 * uniform01(&mut self.rng) - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = libm::sqrt(-2.0 * libm::log(s) / s);
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.sample();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_deterministic() {
        let mut a = NoiseStream::new(7);
        let mut b = NoiseStream::new(7);
        assert_eq!(a.next_key(), b.next_key());
        assert_ne!(a.next_key(), NoiseStream::new(8).next_key());
        assert_eq!(a.position(), 2);
    }

    #[test]
    fn substreams_differ() {
        let k = DrawKey::from_raw(3);
        let x = k.normal(0).sample();
        let y = k.normal(1).sample();
        assert_ne!(x, y);
        assert_eq!(x, k.normal(0).sample());
    }

    #[test]
    fn normal_moments() {
        let mut g = DrawKey::from_raw(11).normal(0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = g.sample();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}
