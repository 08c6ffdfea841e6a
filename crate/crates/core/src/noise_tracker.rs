//! Speech-presence-probability driven noise PSD tracking.
//!
//! Per bin and frame the tracker computes the posterior probability of
//! speech presence under a fixed-SNR speech hypothesis, forms an MMSE
//! estimate of the noise periodogram from it, and smooths that estimate
//! recursively over time. A slow average of the probability detects bins
//! stuck near certainty and caps them, so an underestimated noise floor
//! can always recover.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTrackerConfig {
    /// Fixed a priori SNR assumed under speech presence (linear).
    pub xi_h1: f64,
    /// Recursive smoothing constant of the noise PSD.
    pub beta: f64,
    /// Smoothing constant of the stagnation detector.
    pub spp_smooth: f64,
    /// Ceiling applied to the probability once the detector exceeds it.
    pub spp_clamp: f64,
    /// Frames averaged to seed the estimate.
    pub init_frames: usize,
}

impl Default for NoiseTrackerConfig {
    fn default() -> Self {
        Self {
            xi_h1: 10f64.powf(-15.0 / 10.0),
            beta: 0.8,
            spp_smooth: 0.9,
            spp_clamp: 0.99,
            init_frames: 5,
        }
    }
}

impl NoiseTrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi_h1 > 0.0 && self.xi_h1.is_finite()) {
            return Err(Error::InvalidConfig(format!("xi_h1 {} must be positive", self.xi_h1)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta {} must lie in [0, 1)", self.beta)));
        }
        if !(0.0..1.0).contains(&self.spp_smooth) {
            return Err(Error::InvalidConfig(format!(
                "spp_smooth {} must lie in [0, 1)",
                self.spp_smooth
            )));
        }
        if !(self.spp_clamp > 0.0 && self.spp_clamp < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "spp_clamp {} must lie in (0, 1)",
                self.spp_clamp
            )));
        }
        if self.init_frames == 0 {
            return Err(Error::InvalidConfig("init_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// Streaming tracker state for one audio stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrackState {
    pub noise_psd: Vec<f64>,
    pub spp_bar: Vec<f64>,
    pub frames_seen: usize,
    pub config: NoiseTrackerConfig,
}

/// Posterior probability of speech presence for one bin.
pub fn spp(noisy_power: f64, prev_noise_psd: f64, xi_h1: f64) -> Result<f64> {
    if !(prev_noise_psd > 0.0) {
        return Err(Error::Domain(format!(
            "noise PSD must be positive, got {prev_noise_psd}"
        )));
    }
    Ok(spp_unchecked(noisy_power / prev_noise_psd, xi_h1))
}

#[inline]
fn spp_unchecked(posterior_snr: f64, xi_h1: f64) -> f64 {
    let arg = -posterior_snr * xi_h1 / (1.0 + xi_h1);
    1.0 / (1.0 + (1.0 + xi_h1) * arg.exp())
}

/// MMSE noise periodogram estimate for a given presence probability.
#[inline]
pub fn noise_periodogram(p: f64, noisy_power: f64, prev_noise_psd: f64) -> f64 {
    (1.0 - p) * noisy_power + p * prev_noise_psd
}

/// First-order recursive smoothing of the noise periodogram.
#[inline]
pub fn smooth_noise_psd(beta: f64, noise_periodogram: f64, prev_noise_psd: f64) -> f64 {
    (1.0 - beta) * noise_periodogram + beta * prev_noise_psd
}

impl NoiseTrackState {
    /// Seeds the estimate with the per-bin mean of the given periodograms.
    pub fn init(periodograms: &[Vec<f64>], config: NoiseTrackerConfig) -> Result<Self> {
        config.validate()?;
        let first = periodograms
            .first()
            .ok_or_else(|| Error::EmptyInput("noise tracker needs at least one frame".into()))?;
        let n_bins = first.len();
        if n_bins == 0 {
            return Err(Error::EmptyInput("periodogram has no bins".into()));
        }
        let mut mean = vec![0.0; n_bins];
        for p in periodograms {
            if p.len() != n_bins {
                return Err(Error::shape("periodogram bins", n_bins, p.len()));
            }
            check_power(p)?;
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        let count = periodograms.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let overall = mean.iter().sum::<f64>() / n_bins as f64;
        let mut floor = 1e-12 * overall;
        if !(floor > 0.0) {
            floor = f64::MIN_POSITIVE;
        }
        let noise_psd = mean.into_iter().map(|m| m.max(floor)).collect();
        Ok(Self {
            noise_psd,
            spp_bar: vec![0.0; n_bins],
            frames_seen: 0,
            config,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.noise_psd.len()
    }

    /// Consumes one noisy periodogram; returns the updated noise PSD and the
    /// presence probabilities that were applied.
    pub fn update(&mut self, noisy_power: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if noisy_power.len() != self.n_bins() {
            return Err(Error::shape("noisy periodogram bins", self.n_bins(), noisy_power.len()));
        }
        check_power(noisy_power)?;
        let cfg = self.config;
        let mut probs = Vec::with_capacity(noisy_power.len());
        for ((y2, psd), bar) in noisy_power
            .iter()
            .zip(self.noise_psd.iter_mut())
            .zip(self.spp_bar.iter_mut())
        {
            let mut p = spp_unchecked(y2 / *psd, cfg.xi_h1);
            *bar = cfg.spp_smooth * *bar + (1.0 - cfg.spp_smooth) * p;
            if *bar > cfg.spp_clamp {
                p = p.min(cfg.spp_clamp);
            }
            let n2 = noise_periodogram(p, *y2, *psd);
            // Stays positive: convex combination with a positive previous value.
            *psd = smooth_noise_psd(cfg.beta, n2, *psd).max(f64::MIN_POSITIVE);
            probs.push(p);
        }
        self.frames_seen += 1;
        Ok((self.noise_psd.clone(), probs))
    }
}

fn check_power(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        Some(v) => Err(Error::Domain(format!(
            "periodogram entries must be finite and nonnegative, got {v}"
        ))),
        None => Ok(()),
    }
}
