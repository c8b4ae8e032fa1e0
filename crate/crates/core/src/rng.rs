//! Seeded, counter-addressed random numbers.
//!
//! Draw `i` of a stream depends only on `(seed, i)`, so a batch can be split
//! across workers in any way without changing the result.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform variates on the open interval (0, 1), addressed by index.
#[derive(Debug, Clone)]
pub struct CounterUniform {
    rng: ChaCha8Rng,
}

impl CounterUniform {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The `index`-th variate of the stream.
    pub fn at(&mut self, index: u64) -> f64 {
        // one u64 = two 32-bit words of keystream
        self.rng.set_word_pos(u128::from(index) * 2);
        to_open_unit(self.rng.next_u64())
    }

    /// `count` consecutive variates starting at `start`.
    pub fn fill(&mut self, start: u64, count: usize) -> Vec<f64> {
        self.rng.set_word_pos(u128::from(start) * 2);
        (0..count)
            .map(|_| to_open_unit(self.rng.next_u64()))
            .collect()
    }
}

/// Maps 53 random bits to the centre of one of 2^53 cells, never 0 or 1.
fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Seed for the `index`-th independent sub-stream of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser over a golden-ratio stride
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A conventional sequential generator for a derived sub-stream.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_draws_match_sequential_fill() {
        let mut a = CounterUniform::new(7);
        let seq = a.fill(0, 100);
        let mut b = CounterUniform::new(7);
        for i in (0..100).rev() {
            assert_eq!(b.at(i as u64), seq[i]);
        }
        assert!(seq.iter().all(|&u| u > 0.0 && u < 1.0));
    }

    #[test]
    fn partitioned_fill_is_identical() {
        let mut a = CounterUniform::new(11);
        let whole = a.fill(0, 64);
        let mut b = CounterUniform::new(11);
        let mut parts = b.fill(32, 32);
        let mut head = b.fill(0, 32);
        head.append(&mut parts);
        assert_eq!(whole, head);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
