//! Stateless counter-based Gaussian generation.
//!
//! Every variate is a pure function of `(seed, stream, domain, mode, step)`:
//! the first three are folded into a key, each mode gets its own splitmix64
//! sequence, and the step indexes into that sequence directly. Tables can be
//! filled in any order, or in parallel, with identical results.

use std::f64::consts::PI;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer, a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterKey(u64);

impl CounterKey {
    pub fn new(seed: u64, stream: u64, domain: u64) -> Self {
        let k = mix64(seed ^ GOLDEN);
        let k = mix64(k ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
        let k = mix64(k ^ domain.wrapping_mul(0xCA5A_8263_9512_1157));
        CounterKey(k)
    }

    #[inline]
    pub fn mode(self, mode: usize) -> ModeKey {
        ModeKey(mix64(self.0 ^ (mode as u64).wrapping_add(1).wrapping_mul(GOLDEN)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeKey(u64);

impl ModeKey {
    /// The `index`-th output of the splitmix64 sequence started at this key.
    #[inline]
    fn bits(self, index: u64) -> u64 {
        mix64(self.0.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Two independent standard normals for `step` (Box-Muller).
    #[inline]
    pub fn normal_pair(self, step: usize) -> (f64, f64) {
        let s = 2 * step as u64;
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((self.bits(s) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.bits(s + 1) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let r = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (2.0 * PI * u2).sin_cos();
        (r * cos, r * sin)
    }
}
