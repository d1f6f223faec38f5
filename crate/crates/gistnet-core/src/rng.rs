//! Deterministic seeded randomness. A splitmix64 state advance with a
//! per-stream offset: identical (seed, stream_id) yields identical sequences
//! on every platform, and distinct streams are independent of call
//! interleaving. One generator per logical consumer; parallel work must use
//! distinct stream ids.

use crate::tensor::{Scalar, Shape, Tensor};
use crate::{Error, Result};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splitmix64 generator with an explicit stream id.
#[derive(Debug, Clone)]
pub struct SeededRng {
    state: u64,
    stream_id: u64,
    /// Second Box-Muller variate held for the next normal draw.
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        // The stream id is folded through the mixer so that nearby ids give
        // unrelated state trajectories.
        SeededRng {
            state: seed ^ mix64(stream_id.wrapping_mul(GAMMA) ^ GAMMA),
            stream_id,
            spare_normal: None,
        }
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives an independent child stream without disturbing this one.
    pub fn substream(&self, tag: u64) -> SeededRng {
        SeededRng::new(self.state, self.stream_id ^ mix64(tag).wrapping_add(tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe for logarithms.
    fn uniform01_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Rejection-free modulo of a 64-bit draw is
    /// biased; use Lemire-style multiply-shift which is unbiased enough for
    /// n << 2^32 and still deterministic, so we keep a rejection loop only
    /// for exactness.
    pub fn uniform_range(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_range requires n > 0");
        let n64 = n as u64;
        let limit = u64::MAX - u64::MAX % n64;
        loop {
            let x = self.next_u64();
            if x < limit {
                return (x % n64) as usize;
            }
        }
    }

    /// Standard-normal variate via Box-Muller on the fixed generator.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform01_open_low();
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Tensor of normal draws; deterministic for fixed (seed, stream, call
    /// order).
    pub fn normal_tensor<T: Scalar>(&mut self, shape: Shape, mean: f64, std: f64) -> Result<Tensor<T>> {
        if std < 0.0 {
            return Err(Error::Argument(format!("std must be >= 0, got {std}")));
        }
        let n = shape.len();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::from_f64(mean + std * self.normal()));
        }
        Tensor::from_vec(shape, data)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_range(i + 1);
            items.swap(i, j);
        }
    }
}
