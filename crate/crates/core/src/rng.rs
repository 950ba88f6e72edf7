//! Seeded random streams.
//!
//! A stream is ChaCha8 keyed by `seed`, with `stream_id` selecting one of
//! 2^64 independent output sequences. Sweeps give every cell its own
//! `stream_id` (see [`stream_id`]) so results do not depend on which worker
//! ran the cell or in what order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::vector::Vector;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream under the same seed, identified by `self.stream_id` and `key`.
    pub fn fork(&self, key: u64) -> RngStream {
        RngStream::new(self.seed, stream_id(&[self.stream_id, key]))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for o in out {
            *o = self.inner.sample(StandardNormal);
        }
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

/// `d` i.i.d. standard normal draws.
pub fn standard_normal(rng: &mut RngStream, d: usize) -> Result<Vector> {
    if d == 0 {
        return Err(Error::invalid("standard_normal needs d >= 1"));
    }
    let mut v = alloc::vec![0.0; d];
    rng.fill_normal(&mut v);
    Vector::from_vec(v)
}

/// Mixes a key tuple into a 64-bit stream id (splitmix64 finalizer per part).
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h = splitmix(h ^ splitmix(p));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(11, 3);
        let mut b = RngStream::new(11, 3);
        let va = standard_normal(&mut a, 64).unwrap();
        let vb = standard_normal(&mut b, 64).unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(11, 3);
        let mut b = RngStream::new(11, 4);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(standard_normal(&mut RngStream::new(0, 0), 0).is_err());
    }

    #[test]
    fn normal_moments_within_clt_bounds() {
        let n = 1_000_000;
        let mut rng = RngStream::new(2024, 0);
        let v = standard_normal(&mut rng, n).unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        // 3 sigma: sd(mean) = 1/sqrt(n), sd(var) = sqrt(2/n)
        let n = n as f64;
        assert!(mean.abs() < 3.0 / libm::sqrt(n), "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * libm::sqrt(2.0 / n), "var {var}");
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.01);
    }

    #[test]
    fn stream_id_order_sensitive() {
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
        assert_eq!(stream_id(&[5, 6, 7]), stream_id(&[5, 6, 7]));
    }
}
