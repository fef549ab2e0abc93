//! Deterministic counter-based PRNG (SplitMix64 core).
//!
//! Each draw is a pure function of (seed, counter), so independent streams
//! can be forked per sample and generation order never affects the values.

use crate::scalar::Scalar;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based random number generator. Same seed + same call sequence
/// yields identical output on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Independent stream derived from this generator's seed and a stream id.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng {
            seed: mix(self.seed ^ mix(stream.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(c.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = num_traits::Float::sqrt(-2.0 * num_traits::Float::ln(1.0 - u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        r * num_traits::Float::cos(theta)
    }

    pub fn normal_scalar<T: Scalar>(&mut self) -> T {
        T::from_f64(self.normal())
    }

    /// Integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Deterministic in-place Fisher-Yates shuffle.
    pub fn shuffle<V>(&mut self, items: &mut [V]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn forked_streams_are_independent_of_parent_state() {
        let mut parent = Rng::new(7);
        let fork_before = parent.fork(3);
        parent.next_u64();
        let fork_after = parent.fork(3);
        assert_eq!(fork_before.seed, fork_after.seed);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let x = rng.uniform();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut rng = Rng::new(9);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = rng.normal();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
