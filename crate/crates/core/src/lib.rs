//! Single-channel speech enhancement.
//!
//! The crate provides an STFT front end, a speech-presence-probability
//! noise tracker, a cepstrally smoothed speech PSD estimator, SNR-based
//! input features, a small feed-forward mask estimator with its training
//! loop, and objective quality measures.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::len_without_is_empty)]

pub mod enhance;
pub mod error;
pub mod features;
pub mod metrics;
pub mod mlp;
pub mod noise_tracker;
pub mod speech_psd;
pub mod stft;
pub mod training;

pub use enhance::{enhance, enhance_detailed, EnhanceConfig, EnhanceOutput, EnhancePath};
pub use error::{Error, Result};
pub use features::{extract_features, AnalysisConfig, FeatureKind, FeatureStream};
pub use metrics::{evaluate, log_spectral_distance, segmental_snr, MetricReport};
pub use mlp::MlpModel;
pub use stft::{StftConfig, StftEngine, Spectrogram};
pub use training::{build_dataset, train, DatasetConfig, MixtureSpec, TrainConfig, TrainHistory};
