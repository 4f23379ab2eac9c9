//! Deterministic test-signal generators.
//!
//! Everything here is seeded; the same arguments always produce the same
//! samples, which keeps fixtures and benchmarks reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;

/// Harmonic tone complex with a slow amplitude envelope and soft pauses,
/// crudely shaped like voiced speech.
pub fn harmonic_voice(seed: u64, len: usize, sample_rate: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(100.0..180.0);
    let sr = sample_rate as f64;
    let tau = std::f64::consts::TAU;
    let mut samples = vec![0.0; len];
    for h in 1..=8u32 {
        let amp = rng.random_range(0.05..0.25) / h as f64;
        let phase = rng.random_range(0.0..tau);
        for (n, slot) in samples.iter_mut().enumerate() {
            let t = n as f64 / sr;
            let envelope = 0.35 + 0.65 * (tau * 2.3 * t + phase).sin().powi(2);
            *slot += amp * envelope * (tau * f0 * h as f64 * t + phase).sin();
        }
    }
    Waveform::new(samples, sample_rate).expect("generated signal is finite")
}

/// Uniform white noise in [-amplitude, amplitude].
pub fn white_noise(seed: u64, len: usize, sample_rate: u32, amplitude: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(
        (0..len)
            .map(|_| rng.random_range(-amplitude..amplitude))
            .collect(),
        sample_rate,
    )
    .expect("generated signal is finite")
}

/// Pure sine at `freq` Hz.
pub fn sine(freq: f64, len: usize, sample_rate: u32, amplitude: f64) -> Waveform {
    let sr = sample_rate as f64;
    Waveform::new(
        (0..len)
            .map(|n| amplitude * (std::f64::consts::TAU * freq * n as f64 / sr).sin())
            .collect(),
        sample_rate,
    )
    .expect("generated signal is finite")
}
