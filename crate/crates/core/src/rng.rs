//! Counter-based random streams for reproducible Monte-Carlo estimates.
//!
//! The n-th output is a pure function of (key, n), so estimates are
//! bit-reproducible for a given seed and can be sharded across workers by
//! deriving one substream per shard and reducing shard results in index
//! order.

use crate::scalar::Real;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based generator with a 64-bit key and 64-bit counter.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed ^ GOLDEN),
            counter: 0,
        }
    }

    /// Independent stream derived from this stream's key and an index.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            key: mix(self.key ^ mix(index.wrapping_mul(0xd134_2543_de82_ef95).wrapping_add(1))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in (0, 1]; never returns 0 so logarithms are safe.
    #[inline]
    pub fn uniform<T: Real>(&mut self) -> T {
        let u = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        T::c(u)
    }

    /// Pair of independent standard normals (Box-Muller, rejection-free).
    pub fn normal_pair<T: Real>(&mut self) -> (T, T) {
        let u1: T = self.uniform();
        let u2: T = self.uniform();
        let r = (-(T::one() + T::one()) * u1.ln()).sqrt();
        let theta = T::c(2.0 * std::f64::consts::PI) * u2;
        (r * theta.cos(), r * theta.sin())
    }
}
