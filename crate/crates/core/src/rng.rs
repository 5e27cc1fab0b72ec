//! Seeded SplitMix64 stream and the sampling primitives built on it.
//!
//! The generator is fixed so that every seeded selection in the toolkit is
//! reproducible bit-for-bit across platforms and releases:
//!
//! * state advances by `0x9E3779B97F4A7C15` per draw, output is the standard
//!   SplitMix64 finalizer;
//! * `below(n)` uses rejection on the top of the 64-bit range to stay unbiased;
//! * `sample_indices(n, k)` is a partial Fisher-Yates shuffle over `0..n`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // largest multiple of n that fits, exclusive
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Draws `min(k, n)` distinct positions from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            perm.swap(i, j);
        }
        perm.truncate(k);
        perm
    }

    /// Draws `min(k, pool.len())` distinct elements of `pool` without replacement.
    pub fn choose_multiple<T: Copy>(&mut self, pool: &[T], k: usize) -> Vec<T> {
        self.sample_indices(pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    }
}
