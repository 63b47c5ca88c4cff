//! Counter-based SplitMix64 plus Box–Muller normals.
//!
//! The stream is defined so it can be reproduced in any language:
//!
//! * draw `i` (0-based) is `mix(seed + (i + 1) · 0x9E3779B97F4A7C15)` with
//!   wrapping 64-bit arithmetic, where `mix` is the SplitMix64 finaliser
//!   (`z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//!   z *= 0x94D049BB133111EB; z ^= z >> 31`);
//! * a uniform is `(draw >> 11) · 2⁻⁵³`, in `[0, 1)`;
//! * a standard normal consumes two uniforms `u1, u2` and returns
//!   `sqrt(−2 ln(1 − u1)) · cos(2π u2)`. The sine half is discarded so each
//!   normal costs exactly two draws.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { seed, counter: 0 }
    }

    /// Independent stream for a sub-task, e.g. one cluster of a fixture.
    pub fn fork(seed: u64, stream: u64) -> Self {
        SplitMix64::new(mix(seed ^ mix(stream.wrapping_add(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.next_normal()
    }
}
