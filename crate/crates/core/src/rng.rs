//! Seedable, portable pseudo-random number generation.
//!
//! Model reproducibility depends on every random draw being identical
//! across platforms and library versions, so the generator is pinned here
//! rather than taken from an external crate. The algorithm is SplitMix64
//! (Steele, Lea & Flood's `splitmix64` finalizer over a Weyl sequence with
//! increment `0x9E3779B97F4A7C15`), which uses only 64-bit integer
//! arithmetic and is therefore bit-exact everywhere.
//!
//! Derived streams use [`split_seed`]: `child = mix(seed + GOLDEN * (index + 1))`
//! with wrapping arithmetic, where `mix` is the SplitMix64 finalizer. For a
//! fixed parent seed the child seeds are pairwise distinct because the
//! argument to the bijective `mix` differs per index.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective 64-bit mixing function.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `index` from a parent seed.
///
/// This is the documented split function used for per-tree seeds in
/// forests and per-fold seeds in cross-validation.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// A SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform float in `[0, 1)` built from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, n)` via the multiply-shift reduction
    /// `(next_u64() * n) >> 64`.
    ///
    /// Panics if `n == 0`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index: empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle, iterating from the end.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_index(i + 1);
            slice.swap(i, j);
        }
    }

    /// Samples `k` distinct indices from `0..n` (partial Fisher-Yates),
    /// returned in ascending order.
    ///
    /// Panics if `k > n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "sample_indices: k > n");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_unstable();
        pool
    }

    /// Standard normal deviate via the Box-Muller transform.
    ///
    /// Draws two uniforms per call and discards the second branch; fine for
    /// the low-volume synthetic-corpus use it exists for.
    pub fn next_gaussian(&mut self) -> f64 {
        // u1 in (0,1] so ln() is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
