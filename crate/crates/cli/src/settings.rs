//! Flat `key = value` configuration files.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use snr_enhance::features::{AnalysisConfig, FeatureKind};
use snr_enhance::stft::StftConfig;
use snr_enhance::training::{DatasetConfig, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    NonMl,
    Ml,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nonml" => Ok(Mode::NonMl),
            "ml" => Ok(Mode::Ml),
            other => Err(format!("unknown mode '{other}', expected one of: nonml, ml")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub analysis: AnalysisConfig,
    pub train: TrainConfig,
    pub init_seconds: f64,
    pub pad_fraction: f64,
    pub g_min_db: f64,
    pub mode: Mode,
    pub kind: FeatureKind,
    pub model: Option<PathBuf>,
    pub hidden: Vec<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let dataset = DatasetConfig::default();
        Self {
            analysis: AnalysisConfig::default(),
            train: TrainConfig::default(),
            init_seconds: dataset.init_seconds,
            pad_fraction: dataset.pad_fraction,
            g_min_db: -20.0,
            mode: Mode::NonMl,
            kind: FeatureKind::LogAprioriPlusAposteriori,
            model: None,
            hidden: vec![1024, 1024, 1024],
        }
    }
}

pub fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("layer widths must be comma-separated positive integers, got '{s}'"))?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(format!("layer widths must be positive, got '{s}'"));
    }
    Ok(dims)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

impl Settings {
    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            analysis: self.analysis,
            init_seconds: self.init_seconds,
            pad_fraction: self.pad_fraction,
        }
    }

    /// Sets one field by its configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let tr = &mut self.analysis.tracker;
        let tcs = &mut self.analysis.tcs;
        let t = &mut self.train;
        match key {
            "frame_len" => {
                self.analysis.stft = StftConfig::new(self.analysis.stft.sample_rate_hz, parse(key, value)?)
                    .map_err(|e| e.to_string())?
            }
            "xi_h1" => tr.xi_h1 = parse(key, value)?,
            "beta" => tr.beta = parse(key, value)?,
            "spp_smooth" => tr.spp_smooth = parse(key, value)?,
            "spp_clamp" => tr.spp_clamp = parse(key, value)?,
            "init_frames" => tr.init_frames = parse(key, value)?,
            "xi_ml_min" => tcs.xi_ml_min = parse(key, value)?,
            "kappa" => tcs.kappa = parse(key, value)?,
            "alpha_env" => tcs.alpha_env = parse(key, value)?,
            "alpha_high" => tcs.alpha_high = parse(key, value)?,
            "env_quefrency_ms" => tcs.env_quefrency_ms = parse(key, value)?,
            "pitch_min_hz" => tcs.pitch_min_hz = parse(key, value)?,
            "pitch_max_hz" => tcs.pitch_max_hz = parse(key, value)?,
            "pitch_peak_threshold" => tcs.pitch_peak_threshold = parse(key, value)?,
            "pitch_vicinity" => tcs.pitch_vicinity = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "loss_eps" => t.loss_eps = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "stability_eps" => t.stability_eps = parse(key, value)?,
            "early_stop_window" => t.early_stop_window = parse(key, value)?,
            "early_stop_rel_improvement" => t.early_stop_rel_improvement = parse(key, value)?,
            "validation_fraction" => t.validation_fraction = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "seed" => t.rng_seed = parse(key, value)?,
            "init_seconds" => self.init_seconds = parse(key, value)?,
            "pad_fraction" => self.pad_fraction = parse(key, value)?,
            "g_min_db" => self.g_min_db = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "kind" => self.kind = value.parse().map_err(|e: snr_enhance::Error| e.to_string())?,
            "model" => self.model = Some(PathBuf::from(value)),
            "dims" => self.hidden = parse_dims(value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, context: &str) -> CliResult<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config {
                context: context.to_string(),
                line: idx + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', found '{line}'")))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut s = Settings::default();
        s.apply_text(&text, &format!("{}: ", path.display()))?;
        Ok(s)
    }
}
