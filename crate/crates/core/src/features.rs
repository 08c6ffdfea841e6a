//! Input features for the mask estimator.
//!
//! Two families are provided. The log periodogram and its noise-aware
//! variant depend on the absolute signal level. The logarithmized a priori
//! and a posteriori SNRs divide by the tracked noise PSD and are therefore
//! unchanged when the input is scaled.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::noise_tracker::{NoiseTrackState, NoiseTrackerConfig};
use crate::speech_psd::{SpeechPsdEstimator, TcsConfig};
use crate::stft::{frame_power, Spectrogram, StftConfig};

/// Past frames appended to every feature vector.
pub const CONTEXT_FRAMES: usize = 3;

/// Additive guard inside logarithms of data-dependent quantities.
pub const LOG_FLOOR: f64 = 1e-12;

pub const FEATURE_MAGIC: &[u8; 8] = b"SNRFEAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Log noisy periodogram.
    LogPeriodogram,
    /// Log noisy periodogram followed by the log noise PSD.
    LogPeriodogramPlusNoisePsd,
    LogAprioriSnr,
    LogAposterioriSnr,
    /// Log a priori SNR followed by the log a posteriori SNR.
    LogAprioriPlusAposteriori,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::LogPeriodogram,
        FeatureKind::LogPeriodogramPlusNoisePsd,
        FeatureKind::LogAprioriSnr,
        FeatureKind::LogAposterioriSnr,
        FeatureKind::LogAprioriPlusAposteriori,
    ];

    /// Identifier stored in feature dumps.
    pub fn id(self) -> u32 {
        match self {
            FeatureKind::LogPeriodogram => 0,
            FeatureKind::LogPeriodogramPlusNoisePsd => 1,
            FeatureKind::LogAprioriSnr => 2,
            FeatureKind::LogAposterioriSnr => 3,
            FeatureKind::LogAprioriPlusAposteriori => 4,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::LogPeriodogram => "y",
            FeatureKind::LogPeriodogramPlusNoisePsd => "y+n",
            FeatureKind::LogAprioriSnr => "xi",
            FeatureKind::LogAposterioriSnr => "gamma",
            FeatureKind::LogAprioriPlusAposteriori => "xi+gamma",
        }
    }

    /// Whether the features are invariant to the input level.
    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            FeatureKind::LogAprioriSnr
                | FeatureKind::LogAposterioriSnr
                | FeatureKind::LogAprioriPlusAposteriori
        )
    }

    fn needs_speech_psd(self) -> bool {
        matches!(
            self,
            FeatureKind::LogAprioriSnr | FeatureKind::LogAprioriPlusAposteriori
        )
    }

    /// Per-frame dimensionality before context stacking.
    pub fn base_dim(self, n_bins: usize) -> usize {
        match self {
            FeatureKind::LogPeriodogramPlusNoisePsd | FeatureKind::LogAprioriPlusAposteriori => {
                2 * n_bins
            }
            _ => n_bins,
        }
    }

    /// Dimensionality after appending `CONTEXT_FRAMES` past frames.
    pub fn stacked_dim(self, n_bins: usize) -> usize {
        self.base_dim(n_bins) * (CONTEXT_FRAMES + 1)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidConfig(format!(
                    "unknown feature kind '{s}'; valid kinds: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Estimator settings shared by feature extraction and enhancement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisConfig {
    pub stft: StftConfig,
    pub tracker: NoiseTrackerConfig,
    pub tcs: TcsConfig,
}

/// Context-stacked feature vectors of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub kind: FeatureKind,
    pub vectors: Vec<Vec<f64>>,
}

impl FeatureStream {
    pub fn n_frames(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Writes the little-endian `SNRFEAT1` dump.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&self.kind.id().to_le_bytes())?;
        w.write_all(&(self.n_frames() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for v in &self.vectors {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let corrupt = |what: &str| Error::CorruptFeatures(what.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::CorruptFeatures(format!(
                "bad magic {:?}, expected \"SNRFEAT1\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word).map_err(|_| corrupt("truncated header"))?;
            Ok(u32::from_le_bytes(word))
        };
        let kind_id = next_u32(&mut r)?;
        let kind = FeatureKind::from_id(kind_id)
            .ok_or_else(|| Error::CorruptFeatures(format!("unknown kind id {kind_id}")))?;
        let frames = next_u32(&mut r)? as usize;
        let dim = next_u32(&mut r)? as usize;
        let mut vectors = Vec::with_capacity(frames);
        let mut buf = [0u8; 8];
        for _ in 0..frames {
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut buf).map_err(|_| corrupt("truncated data"))?;
                v.push(f64::from_le_bytes(buf));
            }
            vectors.push(v);
        }
        Ok(Self { kind, vectors })
    }
}

/// `ln(|Y|^2 + floor)` per bin.
pub fn log_periodogram(frame: &[Complex64]) -> Vec<f64> {
    frame.iter().map(|c| (c.norm_sqr() + LOG_FLOOR).ln()).collect()
}

/// Log a priori and log a posteriori SNR of one frame.
pub fn snr_features(
    noisy_power: &[f64],
    speech_psd: &[f64],
    noise_psd: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = noisy_power.len();
    if speech_psd.len() != n {
        return Err(Error::shape("speech PSD bins", n, speech_psd.len()));
    }
    if noise_psd.len() != n {
        return Err(Error::shape("noise PSD bins", n, noise_psd.len()));
    }
    let mut prior = Vec::with_capacity(n);
    let mut post = Vec::with_capacity(n);
    for ((y2, s), v) in noisy_power.iter().zip(speech_psd).zip(noise_psd) {
        if !(*v > 0.0) || !(*s >= 0.0) {
            return Err(Error::Domain(format!(
                "noise PSD must be positive and speech PSD nonnegative (speech {s}, noise {v})"
            )));
        }
        prior.push(s.max(f64::MIN_POSITIVE).ln() - v.ln());
        let ratio = y2 / v;
        post.push(if ratio.is_finite() {
            (ratio + LOG_FLOOR).ln()
        } else {
            y2.ln() - v.ln()
        });
    }
    Ok((prior, post))
}

/// Appends `context` past frames to every vector, replicating the first
/// frame where the past is missing.
pub fn stack_context(per_frame: &[Vec<f64>], context: usize) -> Vec<Vec<f64>> {
    (0..per_frame.len())
        .map(|l| {
            let mut out = Vec::with_capacity(per_frame[l].len() * (context + 1));
            for c in 0..=context {
                out.extend_from_slice(&per_frame[l.saturating_sub(c)]);
            }
            out
        })
        .collect()
}

/// Frame-by-frame feature computation driving its own estimator states.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    kind: FeatureKind,
    context: usize,
    tracker: NoiseTrackState,
    speech: Option<SpeechPsdEstimator>,
    history: VecDeque<Vec<f64>>,
    first: Option<Vec<f64>>,
}

/// Estimator outputs for one frame, exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimates {
    pub noise_psd: Vec<f64>,
    pub speech_psd: Option<Vec<f64>>,
}

impl FeatureExtractor {
    pub fn new(
        kind: FeatureKind,
        tracker: NoiseTrackState,
        speech: Option<SpeechPsdEstimator>,
    ) -> Result<Self> {
        let speech = if kind.needs_speech_psd() {
            Some(speech.ok_or_else(|| {
                Error::InvalidConfig(format!("feature kind {kind} needs a speech PSD estimator"))
            })?)
        } else {
            speech
        };
        if let Some(s) = &speech {
            if s.state.smoothed_cepstrum.len() / 2 + 1 != tracker.n_bins() {
                return Err(Error::shape(
                    "speech estimator bins",
                    tracker.n_bins(),
                    s.state.smoothed_cepstrum.len() / 2 + 1,
                ));
            }
        }
        Ok(Self {
            kind,
            context: CONTEXT_FRAMES,
            tracker,
            speech,
            history: VecDeque::with_capacity(CONTEXT_FRAMES + 1),
            first: None,
        })
    }

    /// Seeds the estimators from the leading frames of `noisy`.
    pub fn for_spectrogram(noisy: &Spectrogram, kind: FeatureKind, cfg: &AnalysisConfig) -> Result<Self> {
        let n_init = cfg.tracker.init_frames.min(noisy.n_frames());
        let init: Vec<Vec<f64>> = noisy.frames[..n_init].iter().map(|f| frame_power(f)).collect();
        let tracker = NoiseTrackState::init(&init, cfg.tracker)?;
        let speech = if kind.needs_speech_psd() {
            Some(SpeechPsdEstimator::new(cfg.tcs, noisy.config.sample_rate_hz, noisy.n_bins())?)
        } else {
            None
        };
        Self::new(kind, tracker, speech)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn tracker(&self) -> &NoiseTrackState {
        &self.tracker
    }

    /// Updates the estimators with one frame and returns its unstacked
    /// feature vector alongside the estimates used.
    pub fn frame_features(&mut self, frame: &[Complex64]) -> Result<(Vec<f64>, FrameEstimates)> {
        let power = frame_power(frame);
        let (noise_psd, _) = self.tracker.update(&power)?;
        let speech_psd = match &mut self.speech {
            Some(est) if self.kind.needs_speech_psd() => Some(est.estimate(&power, &noise_psd)?),
            _ => None,
        };
        let v = match self.kind {
            FeatureKind::LogPeriodogram => log_periodogram(frame),
            FeatureKind::LogPeriodogramPlusNoisePsd => {
                let mut v = log_periodogram(frame);
                v.extend(noise_psd.iter().map(|n| n.ln()));
                v
            }
            FeatureKind::LogAposterioriSnr => {
                power.iter().zip(&noise_psd).map(|(y2, n)| (y2 / n + LOG_FLOOR).ln()).collect()
            }
            FeatureKind::LogAprioriSnr | FeatureKind::LogAprioriPlusAposteriori => {
                let s = speech_psd.as_deref().expect("speech PSD present for a priori kinds");
                let (mut prior, post) = snr_features(&power, s, &noise_psd)?;
                if self.kind == FeatureKind::LogAprioriPlusAposteriori {
                    prior.extend(post);
                }
                prior
            }
        };
        Ok((v, FrameEstimates { noise_psd, speech_psd }))
    }

    /// Consumes one frame and returns its context-stacked feature vector.
    pub fn push(&mut self, frame: &[Complex64]) -> Result<Vec<f64>> {
        let (v, _) = self.frame_features(frame)?;
        Ok(self.stack(v))
    }

    fn stack(&mut self, v: Vec<f64>) -> Vec<f64> {
        if self.first.is_none() {
            self.first = Some(v.clone());
        }
        self.history.push_front(v);
        self.history.truncate(self.context + 1);
        let first = self.first.as_ref().expect("set above");
        let mut out = Vec::with_capacity(first.len() * (self.context + 1));
        for c in 0..=self.context {
            out.extend_from_slice(self.history.get(c).unwrap_or(first));
        }
        out
    }
}

/// Feature stream of a spectrogram using caller-provided estimator states.
pub fn extract(
    noisy: &Spectrogram,
    kind: FeatureKind,
    tracker: NoiseTrackState,
    speech: Option<SpeechPsdEstimator>,
) -> Result<FeatureStream> {
    let mut ex = FeatureExtractor::new(kind, tracker, speech)?;
    let vectors = noisy
        .frames
        .iter()
        .map(|f| ex.push(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStream { kind, vectors })
}

/// Feature stream of a spectrogram with estimators seeded from its leading
/// frames.
pub fn extract_features(noisy: &Spectrogram, kind: FeatureKind, cfg: &AnalysisConfig) -> Result<FeatureStream> {
    let mut ex = FeatureExtractor::for_spectrogram(noisy, kind, cfg)?;
    let vectors = noisy
        .frames
        .iter()
        .map(|f| ex.push(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStream { kind, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_periodogram_values() {
        let v = log_periodogram(&[
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, std::f64::consts::E.sqrt()),
            Complex64::new(0.0, 0.0),
        ]);
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-11);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-11);
        assert_abs_diff_eq!(v[2], -27.631021115928547, epsilon = 1e-9);
    }

    #[test]
    fn snr_feature_values() {
        let (prior, post) = snr_features(&[4.0, 1.0], &[2.0, 3.0], &[2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(prior[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(prior[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post[0], 2f64.ln(), epsilon = 1e-11);
        assert!(matches!(
            snr_features(&[1.0], &[1.0], &[0.0]),
            Err(Error::Domain(_))
        ));
        let (prior, post) = snr_features(&[1e10], &[1e10], &[f64::MIN_POSITIVE]).unwrap();
        assert!(prior[0].is_finite() && post[0].is_finite());
        assert_abs_diff_eq!(post[0], 1e10f64.ln() - f64::MIN_POSITIVE.ln(), epsilon = 1e-9);
    }

    #[test]
    fn snr_features_ignore_common_scale() {
        let y = [4.0, 0.3, 17.0];
        let s = [1.0, 0.01, 5.0];
        let n = [2.0, 0.5, 1.5];
        let c2 = 1e4;
        let (a0, b0) = snr_features(&y, &s, &n).unwrap();
        let scale = |x: &[f64]| x.iter().map(|v| v * c2).collect::<Vec<_>>();
        let (a1, b1) = snr_features(&scale(&y), &scale(&s), &scale(&n)).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(a0[i], a1[i], epsilon = 1e-12);
            assert_abs_diff_eq!(b0[i], b1[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn context_stacking_rules() {
        let frames = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(stack_context(&frames, 0), frames);
        let one = stack_context(&frames[..1], 3);
        assert_eq!(one, vec![vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]]);
        let s = stack_context(&frames, 3);
        assert_eq!(s[2], vec![5.0, 6.0, 3.0, 4.0, 1.0, 2.0, 1.0, 2.0]);
        let big = vec![vec![0.5; 257]; 5];
        let s = stack_context(&big, 3);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|v| v.len() == 1028));
        assert!(stack_context(&[], 3).is_empty());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FeatureKind::ALL {
            assert_eq!(k.name().parse::<FeatureKind>().unwrap(), k);
            assert_eq!(FeatureKind::from_id(k.id()), Some(k));
        }
        let err = "mel".parse::<FeatureKind>().unwrap_err().to_string();
        assert!(err.contains("xi+gamma") && err.contains("y+n"));
    }

    #[test]
    fn dimensions() {
        assert_eq!(FeatureKind::LogPeriodogram.stacked_dim(257), 1028);
        assert_eq!(FeatureKind::LogAposterioriSnr.stacked_dim(257), 1028);
        assert_eq!(FeatureKind::LogAprioriSnr.stacked_dim(257), 1028);
        assert_eq!(FeatureKind::LogAprioriPlusAposteriori.stacked_dim(257), 2056);
        assert_eq!(FeatureKind::LogPeriodogramPlusNoisePsd.stacked_dim(257), 2056);
    }

    #[test]
    fn streaming_stack_matches_batch() {
        let mut ex = FeatureExtractor::new(
            FeatureKind::LogPeriodogram,
            NoiseTrackState::init(&[vec![1.0; 3]], Default::default()).unwrap(),
            None,
        )
        .unwrap();
        let base: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64; 3]).collect();
        let streamed: Vec<_> = base.iter().map(|v| ex.stack(v.clone())).collect();
        assert_eq!(streamed, stack_context(&base, 3));
    }

    #[test]
    fn dump_round_trip_and_rejects_garbage() {
        let s = FeatureStream {
            kind: FeatureKind::LogAprioriPlusAposteriori,
            vectors: vec![vec![1.0, -2.5], vec![f64::MIN_POSITIVE, 3.0]],
        };
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SNRFEAT1");
        assert_eq!(buf.len(), 8 + 12 + 4 * 8);
        assert_eq!(FeatureStream::read_from(&buf[..]).unwrap(), s);
        assert!(FeatureStream::read_from(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(matches!(FeatureStream::read_from(&buf[..]), Err(Error::CorruptFeatures(_))));
    }
}
