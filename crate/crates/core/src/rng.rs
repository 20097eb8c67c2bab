//! The deterministic random stream every party derives its key from.
//!
//! Normative definition (all parties must agree bit for bit):
//!
//! * Generator: ChaCha20 keystream with the 32-byte seed as key, an all-zero
//!   nonce, and the block counter starting at 0. The keystream is consumed
//!   as consecutive 8-byte little-endian words (`next_u64`).
//! * Uniform draw: `u = ((w >> 11) + 1) * 2^-53`, so `u` lies in `(0, 1]`.
//! * Standard normal pair (Box–Muller): draw `u1` then `u2`;
//!   `r = sqrt(-2 ln u1)`, `z0 = r cos(2π u2)`, `z1 = r sin(2π u2)`.
//!   Transcendentals come from the pure-Rust `libm` port so results do not
//!   depend on the platform's C library.
//! * Complex Gaussian with variance 1/2 per component: one Box–Muller pair,
//!   real part `z0 / sqrt 2`, imaginary part `z1 / sqrt 2`.
//! * Bounded integer in `[0, bound)`: rejection sampling; a word `w` is
//!   accepted when `w < 2^64 - (2^64 mod bound)` and mapped to `w mod bound`.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct KeyStream {
    inner: ChaCha20Rng,
    words: u64,
}

impl KeyStream {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            inner: ChaCha20Rng::from_seed(seed),
            words: 0,
        }
    }

    pub fn next_word(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }

    /// Number of 64-bit words consumed so far.
    pub fn words_consumed(&self) -> u64 {
        self.words
    }

    pub fn next_open01(&mut self) -> f64 {
        ((self.next_word() >> 11) + 1) as f64 * TWO_POW_M53
    }

    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * libm::cos(theta), r * libm::sin(theta))
    }

    pub fn next_complex_gaussian(&mut self) -> Complex64 {
        let (z0, z1) = self.next_normal_pair();
        Complex64::new(
            z0 * std::f64::consts::FRAC_1_SQRT_2,
            z1 * std::f64::consts::FRAC_1_SQRT_2,
        )
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let w = self.next_word();
            if w <= zone {
                return w % bound;
            }
        }
    }
}
