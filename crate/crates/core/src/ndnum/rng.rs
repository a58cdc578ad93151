//! Counter-based random numbers.
//!
//! Draw `n` of a stream is a pure function of `(seed, n)`: the SplitMix64
//! finalizer applied to `hash(seed) + (n + 1) * γ`. The full state is the
//! pair `(seed, counter)`, which is what checkpoints persist. Gaussian
//! variates use the cosine branch of Box–Muller with `libm` transcendentals
//! so sequences do not depend on the platform's math library.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named stream ids used with [`Rng::fork`].
pub mod streams {
    pub const DATA: u64 = 1;
    pub const PRIOR: u64 = 2;
    pub const INIT: u64 = 3;
    pub const EVAL: u64 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn from_state(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    /// `(seed, counter)`.
    pub fn state(&self) -> (u64, u64) {
        (self.seed, self.counter)
    }

    /// An independent stream derived from this one's seed and position.
    /// Does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        let seed = mix64(mix64(self.seed) ^ mix64(self.counter.wrapping_add(GAMMA)) ^ mix64(stream ^ 0xD1B5_4A32_D192_ED03));
        Rng::new(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.seed).wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal variate (Box–Muller, cosine branch).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * libm::log(u1)).sqrt() * libm::cos(std::f64::consts::TAU * u2)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.normal() as f32).collect()
    }
}
