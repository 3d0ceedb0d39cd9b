//! Seeded, portable pseudo-random generator (PCG32, the XSH-RR 64/32
//! variant) with named substreams.
//!
//! Every stage of the pipeline draws from its own substream derived from the
//! single run seed, so inserting a stage never perturbs the draws of another.
//! The `u32` output stream is identical on every platform for a given seed.

use crate::num::Scalar;

const MULTIPLIER: u64 = 6364136223846793005;

#[derive(Clone, Debug)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
    seed: u64,
}

impl Pcg32 {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = Pcg32 {
            state: 0,
            inc: (stream << 1) | 1,
            seed,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(seed);
        rng.next_u32();
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A generator on an independent stream named `name`, derived from the
    /// original seed (not from the current position of `self`).
    pub fn substream(&self, name: &str) -> Pcg32 {
        Pcg32::with_stream(self.seed, fnv1a64(name.as_bytes()))
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(MULTIPLIER).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    pub fn next_u64(&mut self) -> u64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. One value per call; no spare caching,
    /// so the draw count is a pure function of call count.
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal<F: Scalar>(&mut self) -> F {
        F::from(self.normal_f64()).expect("normal draw fits scalar")
    }

    pub fn uniform<F: Scalar>(&mut self, lo: f64, hi: f64) -> F {
        F::from(self.range_f64(lo, hi)).expect("uniform draw fits scalar")
    }

    /// Unbiased draw in `[0, n)` by rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
