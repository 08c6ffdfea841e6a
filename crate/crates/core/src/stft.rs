//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! Frames are windowed with a periodic square-root Hann window on both the
//! analysis and the synthesis side. At 50 % overlap the squared window sums
//! to one, so `synthesize(analyze(x))` reproduces `x` wherever two frames
//! overlap.
//!
//! The forward DFT is unnormalized; the inverse carries the `1/frame_len`
//! factor.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;
pub const DEFAULT_FRAME_LEN: usize = 512;

/// Frame geometry shared by every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            frame_len: DEFAULT_FRAME_LEN,
            hop: DEFAULT_FRAME_LEN / 2,
        }
    }
}

impl StftConfig {
    /// Builds a 50 %-overlap configuration.
    pub fn new(sample_rate_hz: u32, frame_len: usize) -> Result<Self> {
        let cfg = Self {
            sample_rate_hz,
            frame_len,
            hop: frame_len / 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if self.frame_len < 4 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "frame length {} must be even and at least 4",
                self.frame_len
            )));
        }
        if self.hop * 2 != self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop {} must be half the frame length {}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    /// Number of retained (non-mirrored) frequency bins.
    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of full frames that fit into `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Length of the signal produced by synthesizing `n_frames` frames.
    pub fn synthesis_len(&self, n_frames: usize) -> usize {
        if n_frames == 0 {
            0
        } else {
            (n_frames - 1) * self.hop + self.frame_len
        }
    }
}

/// Complex STFT frames of a mono signal, bins `0..n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    /// Periodogram `|Y|^2` of every frame.
    pub fn power(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| frame_power(f)).collect()
    }

    /// Scales every coefficient by a real factor.
    pub fn scaled(&self, factor: f64) -> Spectrogram {
        Spectrogram {
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|c| c * factor).collect())
                .collect(),
            config: self.config,
        }
    }

    /// Drops the first `n` frames.
    pub fn skip_frames(&self, n: usize) -> Spectrogram {
        Spectrogram {
            frames: self.frames.iter().skip(n).cloned().collect(),
            config: self.config,
        }
    }
}

pub fn frame_power(frame: &[Complex64]) -> Vec<f64> {
    frame.iter().map(|c| c.norm_sqr()).collect()
}

/// Periodic square-root Hann window.
pub fn sqrt_hann_window(frame_len: usize) -> Result<Vec<f64>> {
    if frame_len < 4 || !frame_len.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "window length {frame_len} must be even and at least 4"
        )));
    }
    let n = frame_len as f64;
    Ok((0..frame_len)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos()).max(0.0).sqrt())
        .collect())
}

/// Reusable FFT plans plus window for one frame geometry.
pub struct StftEngine {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftEngine {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: sqrt_hann_window(config.frame_len)?,
            forward: planner.plan_fft_forward(config.frame_len),
            inverse: planner.plan_fft_inverse(config.frame_len),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Windowed DFT of one `frame_len` segment, half spectrum.
    pub fn analyze_frame(&self, segment: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(segment.len(), self.config.frame_len);
        let mut buf: Vec<Complex64> = segment
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex64::new(x * w, 0.0))
            .collect();
        self.forward.process(&mut buf);
        let n_bins = self.config.n_bins();
        buf.truncate(n_bins);
        // DC and Nyquist are real for real input.
        buf[0].im = 0.0;
        buf[n_bins - 1].im = 0.0;
        buf
    }

    /// Inverse DFT of a half spectrum (mirror rebuilt by conjugate
    /// symmetry), multiplied by the synthesis window.
    pub fn synthesize_frame(&self, half: &[Complex64]) -> Vec<f64> {
        let n = self.config.frame_len;
        let mut full = mirror_spectrum(half, n);
        self.inverse.process(&mut full);
        let scale = 1.0 / n as f64;
        full.iter()
            .zip(&self.window)
            .map(|(c, w)| c.re * scale * w)
            .collect()
    }

    pub fn analyze(&self, signal: &[f64]) -> Result<Spectrogram> {
        let cfg = self.config;
        if signal.len() < cfg.frame_len {
            return Err(Error::EmptyInput(format!(
                "signal of {} samples is shorter than one frame ({})",
                signal.len(),
                cfg.frame_len
            )));
        }
        let frames = (0..cfg.frame_count(signal.len()))
            .map(|l| self.analyze_frame(&signal[l * cfg.hop..l * cfg.hop + cfg.frame_len]))
            .collect();
        Ok(Spectrogram { frames, config: cfg })
    }

    pub fn synthesize(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        let cfg = self.config;
        if spec.config != cfg {
            return Err(Error::InvalidConfig(
                "spectrogram geometry differs from the engine's".into(),
            ));
        }
        if spec.frames.is_empty() {
            return Err(Error::EmptyInput("spectrogram has no frames".into()));
        }
        let n_bins = cfg.n_bins();
        let mut out = vec![0.0; cfg.synthesis_len(spec.frames.len())];
        for (l, frame) in spec.frames.iter().enumerate() {
            if frame.len() != n_bins {
                return Err(Error::shape("spectrogram frame bins", n_bins, frame.len()));
            }
            let seg = self.synthesize_frame(frame);
            for (o, s) in out[l * cfg.hop..l * cfg.hop + cfg.frame_len].iter_mut().zip(seg) {
                *o += s;
            }
        }
        Ok(out)
    }
}

/// Rebuilds a full `n`-point spectrum from bins `0..=n/2`.
pub(crate) fn mirror_spectrum(half: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..half.len()].copy_from_slice(half);
    for k in 1..n / 2 {
        full[n - k] = half[k].conj();
    }
    full
}

/// Analyzes `signal` with a fresh engine.
pub fn analyze(signal: &[f64], config: StftConfig) -> Result<Spectrogram> {
    StftEngine::new(config)?.analyze(signal)
}

/// Overlap-add synthesis with a fresh engine.
pub fn synthesize(spec: &Spectrogram) -> Result<Vec<f64>> {
    StftEngine::new(spec.config)?.synthesize(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64], k: usize) -> Complex64 {
        let n = x.len() as f64;
        x.iter()
            .enumerate()
            .map(|(i, v)| Complex64::from_polar(*v, -2.0 * PI * k as f64 * i as f64 / n))
            .sum()
    }

    #[test]
    fn window_closed_form() {
        let w = sqrt_hann_window(4).unwrap();
        let expected = [0.0, 0.5f64.sqrt(), 1.0, 0.5f64.sqrt()];
        for (a, b) in w.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let w = sqrt_hann_window(512).unwrap();
        assert_abs_diff_eq!(w[256], 1.0, epsilon = 1e-15);
        let energy: f64 = w.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(energy, 256.0, epsilon = 1e-9);
        for n in 0..256 {
            assert_abs_diff_eq!(w[n] * w[n] + w[n + 256] * w[n + 256], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn window_rejects_bad_lengths() {
        assert!(matches!(sqrt_hann_window(7), Err(Error::InvalidConfig(_))));
        assert!(matches!(sqrt_hann_window(2), Err(Error::InvalidConfig(_))));
        assert!(StftConfig::new(16_000, 511).is_err());
    }

    #[test]
    fn short_signal_is_rejected() {
        let err = analyze(&[0.0; 100], StftConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let spec = analyze(&[0.0; 1024], StftConfig::default()).unwrap();
        assert_eq!(spec.n_frames(), 3);
        assert!(spec.frames.iter().flatten().all(|c| c.norm() == 0.0));
        let y = synthesize(&spec).unwrap();
        assert_eq!(y.len(), 1024);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_signal_matches_direct_dft() {
        let cfg = StftConfig::default();
        let spec = analyze(&[1.0; 512], cfg).unwrap();
        let w = sqrt_hann_window(512).unwrap();
        let sum_w: f64 = w.iter().sum();
        assert_abs_diff_eq!(spec.frames[0][0].re, sum_w, epsilon = 1e-9);
        for k in [1usize, 2, 3, 50, 256] {
            let oracle = naive_dft(&w, k);
            assert!((spec.frames[0][k] - oracle).norm() < 1e-9);
        }
    }

    #[test]
    fn bin_centred_sinusoid_concentrates_energy() {
        let cfg = StftConfig::default();
        let k0 = 40usize;
        let x: Vec<f64> = (0..2048)
            .map(|n| (2.0 * PI * k0 as f64 * n as f64 / 512.0).cos())
            .collect();
        let spec = analyze(&x, cfg).unwrap();
        for frame in spec.power() {
            let peak = frame[k0];
            for (k, p) in frame.iter().enumerate() {
                if k.abs_diff(k0) > 2 {
                    assert!(peak > 100.0 * p, "bin {k}");
                }
            }
        }
    }

    #[test]
    fn edge_bins_are_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4000).map(|_| rng.random::<f64>() - 0.5).collect();
        let spec = analyze(&x, StftConfig::default()).unwrap();
        for f in &spec.frames {
            assert_eq!(f[0].im, 0.0);
            assert_eq!(f[256].im, 0.0);
        }
    }

    #[test]
    fn windowed_impulse_single_frame() {
        let cfg = StftConfig::default();
        let w = sqrt_hann_window(512).unwrap();
        let pos = 100;
        let mut x = vec![0.0; 512];
        x[pos] = 1.0;
        let spec = analyze(&x, cfg).unwrap();
        let y = synthesize(&spec).unwrap();
        for (n, v) in y.iter().enumerate() {
            let expected = if n == pos { w[n] * w[n] } else { 0.0 };
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn output_length_follows_frame_count() {
        let cfg = StftConfig::default();
        let spec = analyze(&vec![0.5; 1300], cfg).unwrap();
        assert_eq!(spec.n_frames(), (1300 - 512) / 256 + 1);
        assert_eq!(synthesize(&spec).unwrap().len(), cfg.synthesis_len(spec.n_frames()));
    }
}
