//! Deterministic seed derivation and gaussian draws.
//!
//! Every stochastic routine in this crate takes an explicit 64-bit seed and
//! derives child seeds through `child_seed`, so parallel schedules cannot
//! change results: a cell keyed by `(base, tag, indices...)` always sees the
//! same stream regardless of which thread runs it.

use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The RNG used throughout the crate.
pub type Prng = Xoshiro256PlusPlus;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a key path.
///
/// Order-sensitive: `child_seed(s, &[1, 2])` differs from `child_seed(s, &[2, 1])`.
pub fn child_seed(base: u64, path: &[u64]) -> u64 {
    let mut acc = mix64(base);
    for &p in path {
        acc = mix64(acc ^ mix64(p));
    }
    acc
}

/// Fresh RNG for a derived seed.
pub fn rng_for(base: u64, path: &[u64]) -> Prng {
    Prng::seed_from_u64(child_seed(base, path))
}

/// Standard normal sampler (Box-Muller, with the spare value cached).
pub struct NormalSource {
    rng: Prng,
    spare: Option<f64>,
}

impl NormalSource {
    pub fn new(rng: Prng) -> Self {
        NormalSource { rng, spare: None }
    }

    pub fn from_seed(seed: u64) -> Self {
        NormalSource::new(Prng::seed_from_u64(seed))
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1]: guard the log argument away from zero.
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }

    /// Uniform direction on the unit sphere in `d` dimensions.
    pub fn unit_direction(&mut self, d: usize) -> Vec<f64> {
        loop {
            let mut v = vec![0.0f64; d];
            self.fill_normal(&mut v);
            let norm = crate::linalg::norm2(&v);
            if norm > 1e-12 {
                for x in &mut v {
                    *x /= norm;
                }
                return v;
            }
        }
    }

    pub fn rng_mut(&mut self) -> &mut Prng {
        &mut self.rng
    }
}

/// Deterministic Fisher-Yates shuffle of index order.
pub fn shuffled_indices(len: usize, rng: &mut Prng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
