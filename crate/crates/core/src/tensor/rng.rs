//! Deterministic random streams.
//!
//! Generator: PCG XSL-RR 128/64 (`rand_pcg::Pcg64`) constructed with
//! `Pcg64::new(state, increment)` where `state = splitmix64(seed) << 64 | seed`
//! and the increment encodes the stream id. Uniform variates take the top 53
//! bits of a 64-bit draw and map them to the open interval (0, 1) as
//! `(bits + 0.5) / 2^53`. Normal variates use the Box-Muller transform on two
//! consecutive uniforms `u1, u2`:
//! `z0 = sqrt(-2 ln u1) cos(2 pi u2)`, `z1 = sqrt(-2 ln u1) sin(2 pi u2)`,
//! returning `z0` first and caching `z1` for the next call.

use super::value::Tensor;
use rand_core::Rng;
use rand_pcg::Pcg64;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: Pcg64,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let state = ((splitmix64(seed) as u128) << 64) | seed as u128;
        let inc =
            ((splitmix64(stream_id ^ 0xA5A5_A5A5_A5A5_A5A5) as u128) << 64) | stream_id as u128;
        RngStream {
            seed,
            stream_id,
            inner: Pcg64::new(state, inc),
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent stream for sub-task `index` (e.g. one latent sample). The
    /// result depends only on (seed, stream id, index), never on how many
    /// values were drawn from `self`.
    pub fn substream(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream_id.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ splitmix64(index));
        RngStream::new(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_tensor(&mut self, shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.normal()).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    /// Index drawn from a discrete distribution with the given probabilities.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
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
    fn same_triple_same_values() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(7, 4);
        assert_ne!(RngStream::new(7, 3).next_u64(), c.next_u64());
    }

    #[test]
    fn substreams_ignore_parent_position() {
        let a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 0);
        b.normal();
        b.normal();
        assert_eq!(a.substream(5).next_u64(), b.substream(5).next_u64());
        assert_ne!(a.substream(5).next_u64(), a.substream(6).next_u64());
    }

    #[test]
    fn uniform_in_open_interval() {
        let mut r = RngStream::new(0, 0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = RngStream::new(11, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn first_values_are_pinned() {
        // Frozen outputs guard against generator or transform drift.
        assert_eq!(RngStream::new(42, 0).next_u64(), 8499910989509373603);
        assert_eq!(RngStream::new(42, 0).uniform(), 4.607_810_980_379_738e-1);
        let mut r = RngStream::new(42, 0);
        assert_eq!(r.normal(), -1.025_219_537_432_352_3);
        assert_eq!(r.normal(), -7.061_085_474_035_28e-1);
    }
}
