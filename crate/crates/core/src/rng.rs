//! Reproducible randomness.
//!
//! Every run draws from PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`), a portable
//! generator whose output depends only on its 128-bit state and stream
//! increment. A `(seed, stream)` pair maps to those deterministically, so
//! identical pairs yield bit-identical draw sequences on every platform.
//! Independent runs in a sweep use distinct streams.

use rand::RngExt;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

#[derive(Clone, Debug)]
pub struct SimRng {
    inner: Pcg64,
    seed: u64,
    stream: u64,
    draws: u64,
}

/// SplitMix64 finalizer, used to spread a 64-bit seed over the 128-bit state.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let state = ((splitmix64(seed) as u128) << 64) | splitmix64(seed ^ 0xD1B5_4A32_D192_ED03) as u128;
        Self {
            inner: Pcg64::new(state, stream as u128),
            seed,
            stream,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of primitive draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        self.inner.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.random::<u64>()
    }

    /// A fresh generator on a derived stream, for fan-out work that must not
    /// perturb this generator's sequence.
    pub fn fork(&self, stream: u64) -> SimRng {
        SimRng::new(self.seed, self.stream.wrapping_mul(0x1_0000_0001).wrapping_add(stream).wrapping_add(1))
    }
}
