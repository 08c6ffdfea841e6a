//! Objective quality measures: segmental SNR and log-spectral distance.

use crate::error::{Error, Result};
use crate::stft::{StftConfig, StftEngine};

pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;
const LSD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub seg_snr_db: f64,
    pub lsd_db: f64,
    /// Clamped per-frame SNR of the retained frames.
    pub seg_snr_frames: Vec<f64>,
    /// Per-frame RMS log-spectral distance.
    pub lsd_frames: Vec<f64>,
}

/// Segmental SNR with per-frame values clamped to `[-10, 35]` dB.
pub fn segmental_snr(clean: &[f64], test: &[f64], frame_len: usize, hop: usize) -> Result<f64> {
    Ok(mean(&segmental_snr_frames(clean, test, frame_len, hop)?))
}

/// Clamped per-frame SNR values; frames whose clean energy is below
/// `1e-10` times the mean frame energy are skipped.
pub fn segmental_snr_frames(clean: &[f64], test: &[f64], frame_len: usize, hop: usize) -> Result<Vec<f64>> {
    if clean.len() != test.len() {
        return Err(Error::shape("test signal length", clean.len(), test.len()));
    }
    if frame_len == 0 || hop == 0 {
        return Err(Error::InvalidConfig("frame length and hop must be positive".into()));
    }
    if clean.len() < frame_len {
        return Err(Error::EmptyInput(format!(
            "signal of {} samples is shorter than one frame ({frame_len})",
            clean.len()
        )));
    }
    let n_frames = (clean.len() - frame_len) / hop + 1;
    let energies: Vec<(f64, f64)> = (0..n_frames)
        .map(|l| {
            let range = l * hop..l * hop + frame_len;
            clean[range.clone()]
                .iter()
                .zip(&test[range])
                .fold((0.0, 0.0), |(es, ee), (s, t)| (es + s * s, ee + (s - t) * (s - t)))
        })
        .collect();
    let mean_energy = energies.iter().map(|e| e.0).sum::<f64>() / n_frames as f64;
    if !(mean_energy > 0.0) {
        return Err(Error::DegenerateInput("clean signal is all zeros".into()));
    }
    let threshold = 1e-10 * mean_energy;
    Ok(energies
        .into_iter()
        .filter(|(es, _)| *es >= threshold)
        .map(|(es, ee)| {
            let snr = if ee > 0.0 {
                10.0 * (es / ee).log10()
            } else {
                SEG_SNR_MAX_DB
            };
            snr.clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
        })
        .collect())
}

/// RMS over frames and bins of the dB difference between the periodograms.
pub fn log_spectral_distance(clean: &[f64], test: &[f64], stft: StftConfig) -> Result<f64> {
    let frames = lsd_frames(clean, test, stft)?;
    Ok(mean(&frames.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt())
}

fn lsd_frames(clean: &[f64], test: &[f64], stft: StftConfig) -> Result<Vec<f64>> {
    if clean.len() != test.len() {
        return Err(Error::shape("test signal length", clean.len(), test.len()));
    }
    let engine = StftEngine::new(stft)?;
    let a = engine.analyze(clean)?.power();
    let b = engine.analyze(test)?.power();
    Ok(a.iter()
        .zip(&b)
        .map(|(fa, fb)| {
            let ms = fa
                .iter()
                .zip(fb)
                .map(|(x, y)| {
                    let d = 10.0 * ((x + LSD_FLOOR) / (y + LSD_FLOOR)).log10();
                    d * d
                })
                .sum::<f64>()
                / fa.len() as f64;
            ms.sqrt()
        })
        .collect())
}

/// Both measures with the STFT geometry used for segmentation as well.
pub fn evaluate(clean: &[f64], test: &[f64], stft: StftConfig) -> Result<MetricReport> {
    let seg_snr_frames = segmental_snr_frames(clean, test, stft.frame_len, stft.hop)?;
    let lsd_frames = lsd_frames(clean, test, stft)?;
    Ok(MetricReport {
        seg_snr_db: mean(&seg_snr_frames),
        lsd_db: mean(&lsd_frames.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt(),
        seg_snr_frames,
        lsd_frames,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
