//! Frame-causal enhancement with either a Wiener gain from blind PSD
//! estimates or a mask predicted by a trained model.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::features::{AnalysisConfig, FeatureExtractor, FeatureKind};
use crate::mlp::MlpModel;
use crate::noise_tracker::NoiseTrackState;
use crate::speech_psd::SpeechPsdEstimator;
use crate::stft::{frame_power, Spectrogram, StftEngine};

/// Default minimum gain, -20 dB.
pub const DEFAULT_G_MIN: f64 = 0.1;

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[derive(Debug, Clone)]
pub enum EnhancePath {
    NonMl,
    Ml { kind: FeatureKind, model: Arc<MlpModel> },
}

#[derive(Debug, Clone)]
pub struct EnhanceConfig {
    pub g_min: f64,
    pub path: EnhancePath,
    pub analysis: AnalysisConfig,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            g_min: DEFAULT_G_MIN,
            path: EnhancePath::NonMl,
            analysis: AnalysisConfig::default(),
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_min > 0.0 && self.g_min < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "minimum gain {} must lie in (0, 1)",
                self.g_min
            )));
        }
        self.analysis.stft.validate()?;
        self.analysis.tracker.validate()?;
        self.analysis.tcs.validate()?;
        if let EnhancePath::Ml { kind, model } = &self.path {
            let n_bins = self.analysis.stft.n_bins();
            let want = kind.stacked_dim(n_bins);
            if model.input_dim() != want {
                return Err(Error::InvalidConfig(format!(
                    "model input dimension {} does not match feature kind '{kind}' dimension {want}",
                    model.input_dim()
                )));
            }
            if model.output_dim() != n_bins {
                return Err(Error::InvalidConfig(format!(
                    "model output dimension {} does not match {} frequency bins",
                    model.output_dim(),
                    n_bins
                )));
            }
        }
        Ok(())
    }
}

/// `S / (S + N)` per bin.
pub fn wiener_gain(speech_psd: &[f64], noise_psd: &[f64]) -> Result<Vec<f64>> {
    if speech_psd.len() != noise_psd.len() {
        return Err(Error::shape("noise PSD bins", speech_psd.len(), noise_psd.len()));
    }
    speech_psd
        .iter()
        .zip(noise_psd)
        .map(|(s, n)| {
            if !(*s > 0.0 && *n > 0.0) {
                return Err(Error::Domain(format!(
                    "PSDs must be positive (speech {s}, noise {n})"
                )));
            }
            Ok(s / (s + n))
        })
        .collect()
}

/// Multiplies each coefficient by `max(gain, g_min)`.
pub fn apply_gain(gain: &[f64], g_min: f64, frame: &[Complex64]) -> Result<Vec<Complex64>> {
    if gain.len() != frame.len() {
        return Err(Error::shape("gain bins", frame.len(), gain.len()));
    }
    Ok(frame
        .iter()
        .zip(gain)
        .map(|(y, g)| y * g.max(g_min))
        .collect())
}

/// Everything produced while enhancing one signal.
#[derive(Debug, Clone)]
pub struct EnhanceOutput {
    pub signal: Vec<f64>,
    pub noisy: Spectrogram,
    pub enhanced: Spectrogram,
    /// Gains actually applied, after the minimum-gain floor.
    pub gains: Vec<Vec<f64>>,
}

/// Enhances `signal`; output length follows the synthesis frame count.
pub fn enhance(signal: &[f64], config: &EnhanceConfig) -> Result<Vec<f64>> {
    Ok(enhance_detailed(signal, config)?.signal)
}

pub fn enhance_detailed(signal: &[f64], config: &EnhanceConfig) -> Result<EnhanceOutput> {
    config.validate()?;
    let engine = StftEngine::new(config.analysis.stft)?;
    let noisy = engine.analyze(signal)?;
    let raw_gains = match &config.path {
        EnhancePath::NonMl => wiener_gains(&noisy, &config.analysis)?,
        EnhancePath::Ml { kind, model } => mask_gains(&noisy, *kind, model, &config.analysis)?,
    };
    let mut frames = Vec::with_capacity(noisy.n_frames());
    let mut gains = Vec::with_capacity(noisy.n_frames());
    for (frame, g) in noisy.frames.iter().zip(&raw_gains) {
        frames.push(apply_gain(g, config.g_min, frame)?);
        gains.push(g.iter().map(|v| v.max(config.g_min)).collect());
    }
    let enhanced = Spectrogram {
        frames,
        config: noisy.config,
    };
    let signal = engine.synthesize(&enhanced)?;
    Ok(EnhanceOutput {
        signal,
        noisy,
        enhanced,
        gains,
    })
}

/// Unfloored Wiener gains from the tracked noise PSD and the cepstrally
/// smoothed speech PSD, one frame at a time.
pub fn wiener_gains(noisy: &Spectrogram, cfg: &AnalysisConfig) -> Result<Vec<Vec<f64>>> {
    let power = noisy.power();
    let n_init = cfg.tracker.init_frames.min(power.len());
    let mut tracker = NoiseTrackState::init(&power[..n_init], cfg.tracker)?;
    let mut speech = SpeechPsdEstimator::new(cfg.tcs, noisy.config.sample_rate_hz, noisy.n_bins())?;
    power
        .iter()
        .map(|p| {
            let (noise_psd, _) = tracker.update(p)?;
            let speech_psd: Vec<f64> = speech
                .estimate(p, &noise_psd)?
                .into_iter()
                .map(|s| s.max(f64::MIN_POSITIVE))
                .collect();
            wiener_gain(&speech_psd, &noise_psd)
        })
        .collect()
}

/// Model mask estimates, one frame at a time.
pub fn mask_gains(
    noisy: &Spectrogram,
    kind: FeatureKind,
    model: &MlpModel,
    cfg: &AnalysisConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut extractor = FeatureExtractor::for_spectrogram(noisy, kind, cfg)?;
    noisy
        .frames
        .iter()
        .map(|f| model.forward(&extractor.push(f)?))
        .collect()
}

/// Noise-tracker output per frame, useful for diagnostics.
pub fn tracked_noise(noisy: &Spectrogram, cfg: &AnalysisConfig) -> Result<Vec<Vec<f64>>> {
    let power: Vec<Vec<f64>> = noisy.frames.iter().map(|f| frame_power(f)).collect();
    let n_init = cfg.tracker.init_frames.min(power.len());
    let mut tracker = NoiseTrackState::init(&power[..n_init], cfg.tracker)?;
    power.iter().map(|p| Ok(tracker.update(p)?.0)).collect()
}
