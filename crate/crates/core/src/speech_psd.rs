//! Speech PSD estimation by temporal cepstrum smoothing.
//!
//! A floored maximum-likelihood speech PSD is taken to the cepstral domain,
//! smoothed recursively with quefrency-dependent constants (weak smoothing
//! for the spectral envelope and around a detected pitch peak, strong
//! smoothing elsewhere) and transformed back with a constant bias
//! correction.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Half of the Euler–Mascheroni constant.
pub const DEFAULT_KAPPA: f64 = 0.5 * 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcsConfig {
    pub xi_ml_min: f64,
    pub kappa: f64,
    pub alpha_env: f64,
    pub alpha_high: f64,
    pub env_quefrency_ms: f64,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    pub pitch_peak_threshold: f64,
    pub pitch_vicinity: usize,
}

impl Default for TcsConfig {
    fn default() -> Self {
        Self {
            xi_ml_min: 1e-2,
            kappa: DEFAULT_KAPPA,
            alpha_env: 0.2,
            alpha_high: 0.96,
            env_quefrency_ms: 2.5,
            pitch_min_hz: 70.0,
            pitch_max_hz: 400.0,
            pitch_peak_threshold: 0.2,
            pitch_vicinity: 1,
        }
    }
}

impl TcsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha_env && self.alpha_env <= self.alpha_high && self.alpha_high < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing constants must satisfy 0 <= alpha_env ({}) <= alpha_high ({}) < 1",
                self.alpha_env, self.alpha_high
            )));
        }
        if !(self.xi_ml_min > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "xi_ml_min {} must be positive",
                self.xi_ml_min
            )));
        }
        if !(self.pitch_min_hz > 0.0 && self.pitch_min_hz < self.pitch_max_hz) {
            return Err(Error::InvalidConfig(format!(
                "pitch range [{}, {}] Hz is empty",
                self.pitch_min_hz, self.pitch_max_hz
            )));
        }
        if !self.kappa.is_finite() || !(self.env_quefrency_ms >= 0.0) {
            return Err(Error::InvalidConfig("kappa and env_quefrency_ms must be finite".into()));
        }
        Ok(())
    }
}

/// Floored maximum-likelihood speech PSD.
pub fn ml_speech_psd(noisy_power: &[f64], noise_psd: &[f64], xi_ml_min: f64) -> Result<Vec<f64>> {
    if noisy_power.len() != noise_psd.len() {
        return Err(Error::shape("noise PSD bins", noisy_power.len(), noise_psd.len()));
    }
    noisy_power
        .iter()
        .zip(noise_psd)
        .map(|(y2, n)| {
            if !(*n > 0.0) {
                return Err(Error::Domain(format!("noise PSD must be positive, got {n}")));
            }
            Ok((y2 - n).max(xi_ml_min * n))
        })
        .collect()
}

/// Paired DFT plans for one cepstrum length.
#[derive(Clone)]
pub struct CepstralTransform {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CepstralTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CepstralTransform").field("len", &self.len).finish()
    }
}

impl CepstralTransform {
    pub fn new(frame_len: usize) -> Result<Self> {
        if frame_len < 4 || !frame_len.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "cepstrum length {frame_len} must be even and at least 4"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len: frame_len,
            forward: planner.plan_fft_forward(frame_len),
            inverse: planner.plan_fft_inverse(frame_len),
        })
    }

    /// Builds the transform matching a half-spectrum of `n_bins` bins.
    pub fn for_bins(n_bins: usize) -> Result<Self> {
        if n_bins < 3 {
            return Err(Error::InvalidConfig(format!("{n_bins} bins is too few")));
        }
        Self::new(2 * (n_bins - 1))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn n_bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// Real cepstrum of a half log-spectrum (mirrored to full length).
    pub fn to_cepstrum(&self, log_psd_half: &[f64]) -> Result<Vec<f64>> {
        if log_psd_half.len() != self.n_bins() {
            return Err(Error::shape("log spectrum bins", self.n_bins(), log_psd_half.len()));
        }
        let n = self.len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, v) in log_psd_half.iter().enumerate() {
            buf[k].re = *v;
        }
        for k in 1..n / 2 {
            buf[n - k].re = log_psd_half[k];
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf.iter().map(|c| c.re * scale).collect())
    }

    /// `exp(DFT(cepstrum) + kappa)` on bins `0..n_bins`.
    pub fn from_cepstrum(&self, cepstrum: &[f64], kappa: f64) -> Result<Vec<f64>> {
        if cepstrum.len() != self.len {
            return Err(Error::shape("cepstrum length", self.len, cepstrum.len()));
        }
        let mut buf: Vec<Complex64> = cepstrum.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.forward.process(&mut buf);
        Ok(buf[..self.n_bins()].iter().map(|c| (c.re + kappa).exp()).collect())
    }
}

/// Convenience wrapper planning a transform for one call.
pub fn to_cepstrum(log_psd_half: &[f64]) -> Result<Vec<f64>> {
    CepstralTransform::for_bins(log_psd_half.len())?.to_cepstrum(log_psd_half)
}

pub fn from_cepstrum(cepstrum: &[f64], kappa: f64) -> Result<Vec<f64>> {
    CepstralTransform::new(cepstrum.len())?.from_cepstrum(cepstrum, kappa)
}

/// Quefrency bins below this index belong to the spectral envelope.
pub fn envelope_quefrency_bins(config: &TcsConfig, sample_rate_hz: u32) -> usize {
    (config.env_quefrency_ms * 1e-3 * sample_rate_hz as f64).round() as usize
}

/// Inclusive quefrency search range of the pitch peak, clipped to the
/// lower half of the cepstrum.
pub fn pitch_search_range(config: &TcsConfig, sample_rate_hz: u32, len: usize) -> (usize, usize) {
    let fs = sample_rate_hz as f64;
    let lo = (fs / config.pitch_max_hz).ceil() as usize;
    let hi = ((fs / config.pitch_min_hz).floor() as usize).min(len / 2);
    (lo.max(1), hi)
}

/// Index of the cepstral pitch peak, if its amplitude exceeds the voicing
/// threshold.
pub fn detect_pitch_peak(cepstrum: &[f64], config: &TcsConfig, sample_rate_hz: u32) -> Option<usize> {
    let (lo, hi) = pitch_search_range(config, sample_rate_hz, cepstrum.len());
    if lo > hi {
        return None;
    }
    let (idx, amp) = cepstrum[lo..=hi]
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best });
    (amp > config.pitch_peak_threshold).then_some(lo + idx)
}

/// Per-quefrency smoothing constants for one frame. The upper half mirrors
/// the lower half.
pub fn smoothing_constants(ml_cepstrum: &[f64], config: &TcsConfig, sample_rate_hz: u32) -> Vec<f64> {
    let n = ml_cepstrum.len();
    let env = envelope_quefrency_bins(config, sample_rate_hz);
    let mut half: Vec<f64> = (0..=n / 2)
        .map(|q| if q < env { config.alpha_env } else { config.alpha_high })
        .collect();
    if let Some(peak) = detect_pitch_peak(ml_cepstrum, config, sample_rate_hz) {
        let lo = peak.saturating_sub(config.pitch_vicinity);
        let hi = (peak + config.pitch_vicinity).min(n / 2);
        half[lo..=hi].iter_mut().for_each(|a| *a = config.alpha_env);
    }
    (0..n).map(|q| half[q.min(n - q)]).collect()
}

/// Recursive cepstral smoothing memory for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TcsState {
    pub smoothed_cepstrum: Vec<f64>,
    pub initialized: bool,
}

impl TcsState {
    pub fn new(len: usize) -> Self {
        Self {
            smoothed_cepstrum: vec![0.0; len],
            initialized: false,
        }
    }

    /// Applies one smoothing step and returns the new smoothed cepstrum.
    pub fn smooth_update(
        &mut self,
        ml_cepstrum: &[f64],
        config: &TcsConfig,
        sample_rate_hz: u32,
    ) -> Result<Vec<f64>> {
        let alpha = smoothing_constants(ml_cepstrum, config, sample_rate_hz);
        self.smooth_with(ml_cepstrum, &alpha)
    }

    /// Smoothing step with an explicit constant per quefrency.
    pub fn smooth_with(&mut self, ml_cepstrum: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
        let n = self.smoothed_cepstrum.len();
        if ml_cepstrum.len() != n {
            return Err(Error::shape("cepstrum length", n, ml_cepstrum.len()));
        }
        if alpha.len() != n {
            return Err(Error::shape("smoothing constants", n, alpha.len()));
        }
        if !self.initialized {
            self.smoothed_cepstrum.copy_from_slice(ml_cepstrum);
            self.initialized = true;
        } else {
            for ((s, c), a) in self.smoothed_cepstrum.iter_mut().zip(ml_cepstrum).zip(alpha) {
                *s = (1.0 - a) * c + a * *s;
            }
        }
        Ok(self.smoothed_cepstrum.clone())
    }
}

/// Streaming speech PSD estimator bundling state, transform and settings.
#[derive(Debug, Clone)]
pub struct SpeechPsdEstimator {
    pub config: TcsConfig,
    pub sample_rate_hz: u32,
    pub state: TcsState,
    transform: CepstralTransform,
}

impl SpeechPsdEstimator {
    pub fn new(config: TcsConfig, sample_rate_hz: u32, n_bins: usize) -> Result<Self> {
        config.validate()?;
        let transform = CepstralTransform::for_bins(n_bins)?;
        Ok(Self {
            config,
            sample_rate_hz,
            state: TcsState::new(transform.len()),
            transform,
        })
    }

    /// Estimates the speech PSD of one frame given its periodogram and the
    /// current noise PSD.
    pub fn estimate(&mut self, noisy_power: &[f64], noise_psd: &[f64]) -> Result<Vec<f64>> {
        let ml = ml_speech_psd(noisy_power, noise_psd, self.config.xi_ml_min)?;
        let log_ml: Vec<f64> = ml.iter().map(|v| v.ln()).collect();
        let cep = self.transform.to_cepstrum(&log_ml)?;
        let smoothed = self.state.smooth_update(&cep, &self.config, self.sample_rate_hz)?;
        self.transform.from_cepstrum(&smoothed, self.config.kappa)
    }
}
