//! Training data synthesis and the mask-estimator training loop.
//!
//! A training example is built by embedding a speech signal in a randomly
//! positioned noise segment at a requested SNR and speech peak level. A
//! noise-only lead-in warms up the estimators and is cut from the emitted
//! frames; a noise-only tail of 15 % of the utterance length is kept.
//! Targets are ideal ratio masks computed from the separately known speech
//! and noise components.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::enhance::db_to_amplitude;
use crate::error::{Error, Result};
use crate::features::{AnalysisConfig, FeatureExtractor, FeatureKind, FeatureStream};
use crate::mlp::{backward, batch_loss, glorot_init, AdaGradState, MlpModel};
use crate::noise_tracker::NoiseTrackState;
use crate::stft::{frame_power, Spectrogram, StftEngine};

pub const DEFAULT_PAD_FRACTION: f64 = 0.15;
pub const DEFAULT_INIT_SECONDS: f64 = 2.0;

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub speech_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: f64,
    pub peak_db: f64,
    pub seed: u64,
}

/// Parses `speech=<path> noise=<path> snr=<dB> peak=<dB> seed=<u64>` lines.
/// Blank lines and `#` comments are ignored.
pub fn parse_manifest(text: &str) -> Result<Vec<MixtureSpec>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest {
            line: line_no,
            message,
        };
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found '{tok}'")))?;
            if fields.insert(k, v).is_some() {
                return Err(err(format!("duplicate key '{k}'")));
            }
        }
        let take = |k: &str| fields.get(k).copied().ok_or_else(|| err(format!("missing '{k}'")));
        let number = |k: &str| -> Result<f64> {
            let v = take(k)?;
            let x: f64 = v.parse().map_err(|_| err(format!("'{k}' is not a number: '{v}'")))?;
            if !x.is_finite() {
                return Err(err(format!("'{k}' must be finite")));
            }
            Ok(x)
        };
        let spec = MixtureSpec {
            speech_path: PathBuf::from(take("speech")?),
            noise_path: PathBuf::from(take("noise")?),
            snr_db: number("snr")?,
            peak_db: number("peak")?,
            seed: take("seed")?
                .parse()
                .map_err(|_| err(format!("'seed' is not an unsigned integer: '{}'", fields["seed"])))?,
        };
        if spec.peak_db > 0.0 {
            return Err(err(format!("peak level {} dB exceeds full scale", spec.peak_db)));
        }
        if let Some(extra) = fields
            .keys()
            .find(|k| !["speech", "noise", "snr", "peak", "seed"].contains(k))
        {
            return Err(err(format!("unknown key '{extra}'")));
        }
        out.push(spec);
    }
    Ok(out)
}

/// Loads mono signals at the working sample rate.
pub trait SignalSource: Sync {
    fn load(&self, path: &Path) -> Result<Vec<f64>>;
}

impl SignalSource for HashMap<PathBuf, Vec<f64>> {
    fn load(&self, path: &Path) -> Result<Vec<f64>> {
        self.get(path)
            .cloned()
            .ok_or_else(|| Error::Corpus(format!("no signal registered for {}", path.display())))
    }
}

/// A mixture and its separately known components.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
    /// Samples occupied by the sentence.
    pub speech_range: Range<usize>,
    pub noise_offset: usize,
    pub noise_gain: f64,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Mixes `speech` into noise with a noise-only tail of 15 % of its length.
pub fn mix<R: Rng>(speech: &[f64], noise: &[f64], snr_db: f64, peak_db: f64, rng: &mut R) -> Result<Mixture> {
    mix_with_lead(speech, noise, snr_db, peak_db, 0, DEFAULT_PAD_FRACTION, rng)
}

/// Like [`mix`], with `lead` noise-only samples before the sentence.
///
/// The speech is scaled to the requested peak level; the noise gain sets
/// the energy ratio over the sentence extent to `snr_db`.
pub fn mix_with_lead<R: Rng>(
    speech: &[f64],
    noise: &[f64],
    snr_db: f64,
    peak_db: f64,
    lead: usize,
    pad_fraction: f64,
    rng: &mut R,
) -> Result<Mixture> {
    if !snr_db.is_finite() || !peak_db.is_finite() || peak_db > 0.0 {
        return Err(Error::InvalidConfig(format!(
            "SNR {snr_db} dB must be finite and peak {peak_db} dB must be at most 0 dB"
        )));
    }
    if !(0.0..1.0).contains(&pad_fraction) {
        return Err(Error::InvalidConfig(format!("pad fraction {pad_fraction} outside [0, 1)")));
    }
    let peak = speech.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) {
        return Err(Error::DegenerateInput("speech signal is silent".into()));
    }
    let pad = (pad_fraction * speech.len() as f64).round() as usize;
    let total = lead + speech.len() + pad;
    if noise.len() < total {
        return Err(Error::Corpus(format!(
            "noise of {} samples is shorter than the {total} samples needed",
            noise.len()
        )));
    }
    let noise_offset = rng.random_range(0..=noise.len() - total);
    let segment = &noise[noise_offset..noise_offset + total];
    let speech_range = lead..lead + speech.len();

    let speech_gain = db_to_amplitude(peak_db) / peak;
    let mut clean = vec![0.0; total];
    for (c, s) in clean[speech_range.clone()].iter_mut().zip(speech) {
        *c = s * speech_gain;
    }
    let e_speech = energy(&clean[speech_range.clone()]);
    let e_noise = energy(&segment[speech_range.clone()]);
    if !(e_noise > 0.0) {
        return Err(Error::DegenerateInput("noise segment is silent".into()));
    }
    let noise_gain = (e_speech / (e_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise: Vec<f64> = segment.iter().map(|v| v * noise_gain).collect();
    let noisy = clean.iter().zip(&noise).map(|(s, n)| s + n).collect();
    Ok(Mixture {
        noisy,
        clean,
        noise,
        speech_range,
        noise_offset,
        noise_gain,
    })
}

/// Ideal ratio mask per frame, `0/0` taken as 0.
pub fn irm_targets(clean: &Spectrogram, noise: &Spectrogram) -> Result<Vec<Vec<f64>>> {
    if clean.config != noise.config {
        return Err(Error::InvalidConfig("speech and noise spectrograms differ in geometry".into()));
    }
    if clean.n_frames() != noise.n_frames() {
        return Err(Error::shape("noise frames", clean.n_frames(), noise.n_frames()));
    }
    Ok(clean
        .frames
        .iter()
        .zip(&noise.frames)
        .map(|(s, n)| {
            s.iter()
                .zip(n)
                .map(|(s, n)| {
                    let ps = s.norm_sqr();
                    let total = ps + n.norm_sqr();
                    if total > 0.0 {
                        ps / total
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub analysis: AnalysisConfig,
    pub init_seconds: f64,
    pub pad_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            analysis: AnalysisConfig::default(),
            init_seconds: DEFAULT_INIT_SECONDS,
            pad_fraction: DEFAULT_PAD_FRACTION,
        }
    }
}

impl DatasetConfig {
    /// Lead-in length in samples, rounded to whole hops.
    pub fn lead_samples(&self) -> usize {
        let hop = self.analysis.stft.hop;
        let hops = (self.init_seconds * self.analysis.stft.sample_rate_hz as f64 / hop as f64).round();
        hops as usize * hop
    }

    /// Frames discarded at the start of every example.
    pub fn init_frames(&self) -> usize {
        self.lead_samples() / self.analysis.stft.hop
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: FeatureStream,
    pub targets: Vec<Vec<f64>>,
}

impl TrainingExample {
    pub fn n_frames(&self) -> usize {
        self.targets.len()
    }
}

/// Builds one example from in-memory signals.
pub fn build_example(
    speech: &[f64],
    noise: &[f64],
    snr_db: f64,
    peak_db: f64,
    seed: u64,
    kind: FeatureKind,
    cfg: &DatasetConfig,
) -> Result<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lead = cfg.lead_samples();
    let m = mix_with_lead(speech, noise, snr_db, peak_db, lead, cfg.pad_fraction, &mut rng)?;
    let engine = StftEngine::new(cfg.analysis.stft)?;
    let noisy = engine.analyze(&m.noisy)?;
    let clean = engine.analyze(&m.clean)?;
    let noise = engine.analyze(&m.noise)?;
    let skip = cfg.init_frames();
    if noisy.n_frames() <= skip {
        return Err(Error::Corpus(format!(
            "mixture of {} frames leaves nothing after the {skip}-frame lead-in",
            noisy.n_frames()
        )));
    }
    let mut extractor = FeatureExtractor::for_spectrogram(&noisy, kind, &cfg.analysis)?;
    let mut vectors = Vec::with_capacity(noisy.n_frames() - skip);
    for (l, frame) in noisy.frames.iter().enumerate() {
        let v = extractor.push(frame)?;
        if l >= skip {
            vectors.push(v);
        }
    }
    let targets = irm_targets(&clean, &noise)?.split_off(skip);
    Ok(TrainingExample {
        features: FeatureStream { kind, vectors },
        targets,
    })
}

/// Builds one example per manifest entry, in manifest order.
pub fn build_dataset<S: SignalSource + ?Sized>(
    corpus: &[MixtureSpec],
    kind: FeatureKind,
    cfg: &DatasetConfig,
    source: &S,
) -> Result<Vec<TrainingExample>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus has no mixtures".into()));
    }
    corpus
        .par_iter()
        .map(|spec| {
            let speech = source.load(&spec.speech_path)?;
            let noise = source.load(&spec.noise_path)?;
            build_example(&speech, &noise, spec.snr_db, spec.peak_db, spec.seed, kind, cfg)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub loss_eps: f64,
    pub learning_rate: f64,
    pub stability_eps: f64,
    pub early_stop_window: usize,
    pub early_stop_rel_improvement: f64,
    pub validation_fraction: f64,
    pub max_epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            loss_eps: 0.1,
            learning_rate: crate::mlp::DEFAULT_LEARNING_RATE,
            stability_eps: crate::mlp::DEFAULT_STABILITY_EPS,
            early_stop_window: 10,
            early_stop_rel_improvement: 0.01,
            validation_fraction: 0.15,
            max_epochs: 500,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.loss_eps > 0.0) {
            return bad(format!("loss epsilon {} must be positive", self.loss_eps));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction {} must lie in (0, 1)",
                self.validation_fraction
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.stability_eps >= 0.0) {
            return bad("learning rate must be positive and stability epsilon nonnegative".into());
        }
        if self.early_stop_window == 0 || self.max_epochs == 0 {
            return bad("early-stop window and epoch cap must be positive".into());
        }
        if !(self.early_stop_rel_improvement >= 0.0) {
            return bad("relative improvement threshold must be nonnegative".into());
        }
        Ok(())
    }
}

/// Stops once the validation loss has not dropped by more than the
/// relative threshold below its reference value for `window` epochs. The
/// reference is reset whenever such a drop happens.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    window: usize,
    rel_improvement: f64,
    reference: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(window: usize, rel_improvement: f64) -> Self {
        Self {
            window,
            rel_improvement,
            reference: None,
        }
    }

    /// Records the loss of `epoch`; returns true when training should stop
    /// after this epoch.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        match self.reference {
            None => self.reference = Some((epoch, loss)),
            Some((_, best)) if loss < best * (1.0 - self.rel_improvement) => {
                self.reference = Some((epoch, loss))
            }
            _ => {}
        }
        let (ref_epoch, _) = self.reference.expect("set above");
        epoch >= ref_epoch + self.window
    }

    /// Epoch of the last significant improvement.
    pub fn reference_epoch(&self) -> Option<usize> {
        self.reference.map(|r| r.0)
    }
}

/// Index of the epoch after which a loss trace stops, if it does.
pub fn stopping_epoch(trace: &[f64], window: usize, rel_improvement: f64) -> Option<usize> {
    let mut es = EarlyStopping::new(window, rel_improvement);
    trace.iter().enumerate().find(|(e, l)| es.observe(*e, **l)).map(|(e, _)| e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Mean validation loss of the freshly initialized model.
    pub initial_val_loss: f64,
    /// Epoch whose model is returned.
    pub best_epoch: usize,
    pub train_examples: usize,
    pub val_examples: usize,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Tab-separated `epoch  train_J  val_J` lines.
    pub fn to_tsv(&self) -> String {
        self.epochs
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.epoch, r.train_loss, r.val_loss))
            .collect()
    }
}

fn stack_rows(examples: &[&TrainingExample]) -> (Array2<f64>, Array2<f64>) {
    let rows: usize = examples.iter().map(|e| e.n_frames()).sum();
    let in_dim = examples[0].features.dim();
    let out_dim = examples[0].targets[0].len();
    let mut x = Array2::zeros((rows, in_dim));
    let mut y = Array2::zeros((rows, out_dim));
    let mut r = 0;
    for e in examples {
        for (f, t) in e.features.vectors.iter().zip(&e.targets) {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(f.as_slice()));
            y.row_mut(r).assign(&ndarray::ArrayView1::from(t.as_slice()));
            r += 1;
        }
    }
    (x, y)
}

/// Mean per-frame loss over a set of frames.
pub fn mean_loss(model: &MlpModel, inputs: ArrayView2<f64>, targets: ArrayView2<f64>, eps: f64) -> Result<f64> {
    const CHUNK: usize = 1024;
    let mut total = 0.0;
    for (x, t) in inputs
        .axis_chunks_iter(Axis(0), CHUNK)
        .zip(targets.axis_chunks_iter(Axis(0), CHUNK))
    {
        let out = model.forward_batch(x)?;
        total += batch_loss(out.view(), t, eps) * x.nrows() as f64;
    }
    Ok(total / inputs.nrows().max(1) as f64)
}

/// Trains a model of the given layer widths (input first, output last).
///
/// Whole examples are held out for validation. Each epoch shuffles all
/// training frames, runs AdaGrad over minibatches and then evaluates the
/// mean validation loss. The model with the lowest validation loss is
/// returned.
pub fn train(dataset: &[TrainingExample], dims: &[usize], cfg: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "training needs at least two examples to hold one out, got {}",
            dataset.len()
        )));
    }
    let kind = dataset[0].features.kind;
    for (i, e) in dataset.iter().enumerate() {
        if e.features.kind != kind {
            return Err(Error::InvalidConfig(format!("example {i} mixes feature kinds")));
        }
        if e.features.n_frames() != e.targets.len() || e.targets.is_empty() {
            return Err(Error::shape("target frames", e.features.n_frames(), e.targets.len()));
        }
    }
    let in_dim = dataset[0].features.dim();
    let out_dim = dataset[0].targets[0].len();
    if dims.first() != Some(&in_dim) || dims.last() != Some(&out_dim) {
        return Err(Error::InvalidConfig(format!(
            "layer widths {dims:?} must start at the feature dimension {in_dim} and end at {out_dim} bins"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.validation_fraction * dataset.len() as f64).round() as usize)
        .clamp(1, dataset.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let (x_val, y_val) = stack_rows(&val_idx.iter().map(|&i| &dataset[i]).collect::<Vec<_>>());
    let (x_train, y_train) = stack_rows(&train_idx.iter().map(|&i| &dataset[i]).collect::<Vec<_>>());

    let mut model = glorot_init(dims, cfg.rng_seed)?;
    let mut opt = AdaGradState::new(&model, cfg.learning_rate, cfg.stability_eps);
    let initial_val_loss = mean_loss(&model, x_val.view(), y_val.view(), cfg.loss_eps)?;

    let mut frames: Vec<usize> = (0..x_train.nrows()).collect();
    let mut stopper = EarlyStopping::new(cfg.early_stop_window, cfg.early_stop_rel_improvement);
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut epochs = Vec::new();
    for epoch in 0..cfg.max_epochs {
        frames.shuffle(&mut rng);
        let mut train_total = 0.0;
        for batch in frames.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), batch);
            let yb = y_train.select(Axis(0), batch);
            let (grads, l) = backward(&model, xb.view(), yb.view(), cfg.loss_eps)?;
            if !l.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: format!("minibatch loss is {l}"),
                });
            }
            opt.step(&mut model, &grads)?;
            train_total += l * batch.len() as f64;
        }
        let train_loss = train_total / frames.len() as f64;
        let val_loss = mean_loss(&model, x_val.view(), y_val.view(), cfg.loss_eps)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: format!("validation loss is {val_loss}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.clone()));
        }
        if stopper.observe(epoch, val_loss) {
            break;
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch runs");
    Ok((
        best_model,
        TrainHistory {
            epochs,
            initial_val_loss,
            best_epoch,
            train_examples: train_idx.len(),
            val_examples: val_idx.len(),
        },
    ))
}

/// Linear-phase windowed-sinc low-pass (Hamming window), unit DC gain.
pub fn lowpass_fir(cutoff_hz: f64, taps: usize, sample_rate_hz: u32) -> Result<Vec<f64>> {
    let fs = sample_rate_hz as f64;
    if taps.is_multiple_of(2) || taps < 3 || !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::InvalidConfig(format!(
            "low-pass needs an odd tap count >= 3 and 0 < cutoff < fs/2 (taps {taps}, cutoff {cutoff_hz})"
        )));
    }
    let fc = cutoff_hz / fs;
    let mid = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    Ok(h)
}

/// Filters with group-delay compensation so the output aligns with the
/// input and has the same length.
pub fn filter_aligned(x: &[f64], h: &[f64]) -> Vec<f64> {
    let delay = h.len() / 2;
    (0..x.len())
        .map(|n| {
            let centre = n + delay;
            h.iter()
                .enumerate()
                .filter_map(|(j, c)| centre.checked_sub(j).and_then(|i| x.get(i)).map(|v| c * v))
                .sum()
        })
        .collect()
}

pub const ANCHOR_CUTOFF_HZ: f64 = 2000.0;
pub const ANCHOR_TAPS: usize = 101;
pub const ANCHOR_SNR_DB: f64 = -5.0;
pub const ANCHOR_DD_SMOOTHING: f64 = 0.9;
pub const ANCHOR_G_MIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorOutput {
    pub signal: Vec<f64>,
    /// Low-passed speech as present in the mixture.
    pub speech_component: Vec<f64>,
    pub noise_component: Vec<f64>,
    /// Applied (floored) gains per frame.
    pub gains: Vec<Vec<f64>>,
}

/// Low-quality reference stimulus: band-limited speech in strong noise,
/// enhanced with a decision-directed Wiener filter.
pub fn anchor_signal<R: Rng>(speech: &[f64], noise: &[f64], rng: &mut R, cfg: &AnalysisConfig) -> Result<AnchorOutput> {
    let h = lowpass_fir(ANCHOR_CUTOFF_HZ, ANCHOR_TAPS, cfg.stft.sample_rate_hz)?;
    let speech_lp = filter_aligned(speech, &h);
    let e_speech = energy(&speech_lp);
    if !(e_speech > 0.0) {
        return Err(Error::DegenerateInput("speech signal is silent".into()));
    }
    if noise.len() < speech.len() {
        return Err(Error::Corpus(format!(
            "noise of {} samples is shorter than the {} samples needed",
            noise.len(),
            speech.len()
        )));
    }
    let offset = rng.random_range(0..=noise.len() - speech.len());
    let segment = &noise[offset..offset + speech.len()];
    let e_noise = energy(segment);
    if !(e_noise > 0.0) {
        return Err(Error::DegenerateInput("noise segment is silent".into()));
    }
    let gain = (e_speech / (e_noise * 10f64.powf(ANCHOR_SNR_DB / 10.0))).sqrt();
    let noise_component: Vec<f64> = segment.iter().map(|v| v * gain).collect();
    let noisy: Vec<f64> = speech_lp.iter().zip(&noise_component).map(|(s, n)| s + n).collect();

    let engine = StftEngine::new(cfg.stft)?;
    let spec = engine.analyze(&noisy)?;
    let power: Vec<Vec<f64>> = spec.frames.iter().map(|f| frame_power(f)).collect();
    let n_init = cfg.tracker.init_frames.min(power.len());
    let mut tracker = NoiseTrackState::init(&power[..n_init], cfg.tracker)?;
    let mut prev_noise = tracker.noise_psd.clone();
    let mut prev_clean = vec![0.0; spec.n_bins()];
    let mut frames = Vec::with_capacity(spec.n_frames());
    let mut gains = Vec::with_capacity(spec.n_frames());
    for (frame, p) in spec.frames.iter().zip(&power) {
        let (noise_psd, _) = tracker.update(p)?;
        let g: Vec<f64> = (0..p.len())
            .map(|k| {
                let post = p[k] / noise_psd[k];
                let prior = ANCHOR_DD_SMOOTHING * prev_clean[k] / prev_noise[k]
                    + (1.0 - ANCHOR_DD_SMOOTHING) * (post - 1.0).max(0.0);
                (prior / (1.0 + prior)).max(ANCHOR_G_MIN)
            })
            .collect();
        let out: Vec<_> = frame.iter().zip(&g).map(|(y, g)| y * *g).collect();
        prev_clean = frame_power(&out);
        prev_noise = noise_psd;
        frames.push(out);
        gains.push(g);
    }
    let mut signal = engine.synthesize(&Spectrogram {
        frames,
        config: spec.config,
    })?;
    // Samples past the last full frame are not covered by any frame.
    signal.resize(noisy.len(), 0.0);
    Ok(AnchorOutput {
        signal,
        speech_component: speech_lp,
        noise_component,
        gains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tone(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / 16_000.0).sin()).collect()
    }

    fn pseudo_noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn manifest_parsing() {
        let text = "# corpus\n\nspeech=a.wav noise=n.wav snr=5 peak=-6 seed=3  # tail\nspeech=b.wav noise=n.wav snr=-2.5 peak=-20 seed=9\n";
        let specs = parse_manifest(text).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[1].snr_db, -2.5);
        assert_eq!(specs[0].speech_path, PathBuf::from("a.wav"));
        let bad = "speech=a noise=b snr=1 peak=-3 seed=1\n# ok\nspeech=a noise=b snr=x peak=-3 seed=1\n";
        match parse_manifest(bad).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        assert!(parse_manifest("speech=a noise=b snr=1 seed=1").is_err());
        assert!(parse_manifest("speech=a noise=b snr=1 peak=-3 seed=1 color=red").is_err());
    }

    #[test]
    fn mix_hits_requested_snr_and_peak() {
        let s = tone(8000, 440.0);
        let n = pseudo_noise(20_000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = mix(&s, &n, 7.5, -12.0, &mut rng).unwrap();
        assert_eq!(m.noisy.len(), 8000 + 1200);
        let r = m.speech_range.clone();
        let realized = 10.0 * (energy(&m.clean[r.clone()]) / energy(&m.noise[r.clone()])).log10();
        assert_abs_diff_eq!(realized, 7.5, epsilon = 1e-9);
        let peak = m.clean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert_abs_diff_eq!(20.0 * peak.log10(), -12.0, epsilon = 1e-9);
        assert!(m.clean[8000..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mix_unit_noise_gain_at_matched_energy() {
        let s = vec![0.5, -0.5, 0.5, -0.5];
        let n = vec![-0.5, 0.5, 0.5, -0.5, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mix_with_lead(&s, &n, 0.0, 20.0 * 0.5f64.log10(), 0, 0.0, &mut rng).unwrap();
        assert_abs_diff_eq!(m.noise_gain, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mix_high_snr_is_nearly_clean() {
        let s = tone(4000, 300.0);
        let n = pseudo_noise(6000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = mix(&s, &n, 100.0, -6.0, &mut rng).unwrap();
        let err: f64 = m.noisy.iter().zip(&m.clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert!((err / energy(&m.clean)).sqrt() <= 1e-4);
    }

    #[test]
    fn mix_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            mix(&tone(4000, 300.0), &pseudo_noise(4000, 1), 0.0, -6.0, &mut rng),
            Err(Error::Corpus(_))
        ));
        assert!(matches!(
            mix(&[0.0; 100], &pseudo_noise(4000, 1), 0.0, -6.0, &mut rng),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn irm_values() {
        use num_complex::Complex64;
        let cfg = crate::stft::StftConfig::new(16_000, 4).unwrap();
        let c = |v: f64| Complex64::new(v, 0.0);
        let s = Spectrogram {
            frames: vec![vec![c(1.0), c(1.0), c(3f64.sqrt())]],
            config: cfg,
        };
        let n = Spectrogram {
            frames: vec![vec![c(1.0), c(0.0), c(1.0)]],
            config: cfg,
        };
        let t = irm_targets(&s, &n).unwrap();
        assert_abs_diff_eq!(t[0][0], 0.5, epsilon = 1e-15);
        assert_eq!(t[0][1], 1.0);
        assert_abs_diff_eq!(t[0][2], 0.75, epsilon = 1e-15);
        let z = irm_targets(&n.scaled(0.0), &n.scaled(0.0)).unwrap();
        assert!(z[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn early_stopping_on_injected_traces() {
        for e in [0usize, 3, 17] {
            let mut trace: Vec<f64> = (0..=e).map(|i| 100.0 * 0.9f64.powi(i as i32)).collect();
            let flat = *trace.last().unwrap();
            trace.extend(std::iter::repeat_n(flat, 40));
            assert_eq!(stopping_epoch(&trace, 10, 0.01), Some(e + 10));
        }
        // Sub-threshold improvements do not reset the window.
        let trace: Vec<f64> = (0..30).map(|i| 1.0 - 0.0005 * i as f64).collect();
        assert_eq!(stopping_epoch(&trace, 10, 0.01), Some(10));
        assert_eq!(stopping_epoch(&[5.0, 4.0, 3.0], 10, 0.01), None);
    }

    #[test]
    fn lowpass_response() {
        let h = lowpass_fir(2000.0, 101, 16_000).unwrap();
        assert_eq!(h.len(), 101);
        for i in 0..50 {
            assert_abs_diff_eq!(h[i], h[100 - i], epsilon = 1e-15);
        }
        let gain_at = |f: f64| {
            let w = 2.0 * PI * f / 16_000.0;
            let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(r, i), (n, c)| {
                (r + c * (w * n as f64).cos(), i - c * (w * n as f64).sin())
            });
            (re * re + im * im).sqrt()
        };
        assert_abs_diff_eq!(gain_at(0.0), 1.0, epsilon = 1e-12);
        assert!(gain_at(1000.0) > 0.99);
        assert!(gain_at(3000.0) < 0.01);
        assert!(lowpass_fir(2000.0, 100, 16_000).is_err());
    }
}
