#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use snr_enhance::training::MixtureSpec;

pub const FS: f64 = 16_000.0;

pub fn white_noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

/// White noise with a slow sinusoidal amplitude modulation.
pub fn modulated_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let rate = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    white_noise(n, 1.0, seed)
        .into_iter()
        .enumerate()
        .map(|(i, v)| v * (1.0 + 0.6 * (2.0 * PI * rate * i as f64 / FS + phase).sin()))
        .collect()
}

/// Voiced-speech stand-in: syllables of a harmonic complex with a gliding
/// fundamental and two resonances, separated by silent gaps.
pub fn harmonic_utterance(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = rng.random_range(1.5..2.5);
    let n = (duration * FS) as usize;
    let f0_base = rng.random_range(100.0..220.0);
    let glide_rate = rng.random_range(0.3..1.2);
    let glide_phase = rng.random_range(0.0..2.0 * PI);

    let mut out = vec![0.0; n];
    let mut start = (rng.random_range(0.02..0.1) * FS) as usize;
    let mut phase = 0.0f64;
    while start < n {
        let len = ((rng.random_range(0.15..0.3) * FS) as usize).min(n - start);
        let f1 = rng.random_range(300.0..800.0);
        let f2 = rng.random_range(900.0..2200.0);
        let bw = rng.random_range(120.0..250.0);
        let gain = rng.random_range(0.5..1.0);
        for j in 0..len {
            let i = start + j;
            let t = i as f64 / FS;
            let f0 = f0_base * (1.0 + 0.12 * (2.0 * PI * glide_rate * t + glide_phase).sin());
            phase += 2.0 * PI * f0 / FS;
            let env = gain * (PI * j as f64 / len as f64).sin().powi(2);
            let mut v = 0.0;
            let mut k = 1;
            while k as f64 * f0 < 4000.0 {
                let f = k as f64 * f0;
                let a = (-((f - f1) / bw).powi(2)).exp() + 0.6 * (-((f - f2) / bw).powi(2)).exp() + 0.3 / k as f64;
                v += a * (k as f64 * phase).sin();
                k += 1;
            }
            out[i] = env * v;
        }
        start += len + (rng.random_range(0.05..0.15) * FS) as usize;
    }
    out
}

pub struct Corpus {
    pub signals: HashMap<PathBuf, Vec<f64>>,
    pub specs: Vec<MixtureSpec>,
}

/// Twenty utterances, alternately in white and modulated white noise, at
/// SNRs in [-5, 15] dB and peak levels in [-26, -6] dB.
pub fn desk_corpus() -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut signals = HashMap::new();
    let mut specs = Vec::new();
    for i in 0..20u64 {
        let speech_path = PathBuf::from(format!("speech/{i}"));
        let noise_path = PathBuf::from(format!("noise/{i}"));
        signals.insert(speech_path.clone(), harmonic_utterance(100 + i));
        let noise_len = (6.0 * FS) as usize;
        let noise = if i % 2 == 0 {
            white_noise(noise_len, 1.0, 500 + i)
        } else {
            modulated_noise(noise_len, 500 + i)
        };
        signals.insert(noise_path.clone(), noise);
        specs.push(MixtureSpec {
            speech_path,
            noise_path,
            snr_db: rng.random_range(-5.0..15.0),
            peak_db: rng.random_range(-26.0..-6.0),
            seed: 900 + i,
        });
    }
    Corpus { signals, specs }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
