//! Seed-splitting scheme.
//!
//! Every run takes exactly one user-facing `u64` seed. Each consumer derives
//! its own stream as `stream(seed, STREAM_ID)`, so adding a new consumer never
//! perturbs the draws of existing ones. Stream ids are listed here and nowhere
//! else.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Superposition task: dictionary directions.
pub const STREAM_DICTIONARY: u64 = 1;
/// Superposition task: per-batch coefficients.
pub const STREAM_COEFFS: u64 = 2;
/// Token-sequence generation (induction / bigram batches).
pub const STREAM_TOKENS: u64 = 3;
/// Parameter initialization.
pub const STREAM_INIT: u64 = 4;
/// ICA initial unmixing matrix.
pub const STREAM_ICA: u64 = 5;
/// Gradient-check coordinate sampling.
pub const STREAM_GRADCHECK: u64 = 6;
/// Verification-suite probe inputs.
pub const STREAM_VERIFY: u64 = 7;
/// Held-out evaluation batches.
pub const STREAM_EVAL: u64 = 8;

/// SplitMix64 step; the standard finalizer used to decorrelate seed material.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the RNG for `(seed, stream_id)`. Deterministic across platforms.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = splitmix64(seed ^ splitmix64(stream_id));
    let b = splitmix64(a);
    let c = splitmix64(b);
    let d = splitmix64(c);
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Sub-stream helper for per-index draws (e.g. batch `k` of a task).
pub fn substream(seed: u64, stream_id: u64, index: u64) -> ChaCha8Rng {
    stream(seed, splitmix64(stream_id.wrapping_add(index.wrapping_mul(0x9e37_79b9))))
}

/// Standard normal draw via Box–Muller.
pub fn normal(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
