//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator whose key is derived from
//! `(seed, role, run)` and whose stream id is the unit index (particle or
//! copy). A stream is only ever consumed sequentially by the unit owning it,
//! so draws do not depend on scheduling or thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. Distinct roles never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    /// Hidden signal and its observation noise.
    Truth = 1,
    /// Ensemble particles or McKean copies (initial draw, then per-step noise).
    Particle = 2,
    /// Shared noise driving both legs of a coupled pair.
    Coupling = 3,
    /// Initial-condition draws that are not tied to a particle.
    Initial = 4,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for unit `index` of run `run` in role `role`.
pub fn stream(seed: u64, role: Role, run: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let mix = [splitmix64(&mut state), role as u64, run];
    let mut acc = mix[0];
    for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
        acc ^= mix[k % 3].rotate_left(17 * k as u32);
        let mut s = acc;
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        acc = s;
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// One stream per unit `0..count`.
pub fn streams(seed: u64, role: Role, run: u64, count: usize) -> Vec<ChaCha8Rng> {
    (0..count as u64).map(|i| stream(seed, role, run, i)).collect()
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| standard_normal(rng))
}

/// Fills `out` with N(0, dt) entries.
pub fn fill_brownian<R: Rng + ?Sized>(rng: &mut R, dt: f64, out: &mut [f64]) {
    let sd = dt.sqrt();
    for v in out {
        *v = sd * standard_normal(rng);
    }
}

/// Draw from N(mean, cov) using a precomputed square root of `cov`.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, cov_sqrt: &DMatrix<f64>) -> DVector<f64> {
    mean + cov_sqrt * normal_vector(rng, mean.len())
}
