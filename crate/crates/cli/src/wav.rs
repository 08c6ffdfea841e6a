//! Mono 16 kHz WAV reading and writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{CliError, CliResult};

pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Sample encoding of a supported file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Pcm16,
    Float32,
}

impl Encoding {
    fn spec(self) -> WavSpec {
        let (bits_per_sample, sample_format) = match self {
            Encoding::Pcm16 => (16, SampleFormat::Int),
            Encoding::Float32 => (32, SampleFormat::Float),
        };
        WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE_HZ,
            bits_per_sample,
            sample_format,
        }
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn hound_err(path: &Path, e: hound::Error) -> CliError {
    match e {
        hound::Error::IoError(source) => CliError::io(path, source),
        other => format_err(path, other.to_string()),
    }
}

/// Reads samples scaled to [-1, 1).
pub fn read(path: &Path) -> CliResult<(Vec<f64>, Encoding)> {
    let reader = WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(format_err(
            path,
            format!("sample rate {} Hz is not supported, expected {SAMPLE_RATE_HZ} Hz", spec.sample_rate),
        ));
    }
    if spec.channels != 1 {
        return Err(format_err(path, format!("{} channels found, expected mono", spec.channels)));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            let samples = reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<Result<_, _>>()
                .map_err(|e| hound_err(path, e))?;
            Ok((samples, Encoding::Pcm16))
        }
        (SampleFormat::Float, 32) => {
            let samples = reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(|e| hound_err(path, e))?;
            Ok((samples, Encoding::Float32))
        }
        (fmt, bits) => Err(format_err(
            path,
            format!("{bits}-bit {fmt:?} samples are not supported, expected 16-bit PCM or 32-bit float"),
        )),
    }
}

/// Writes samples; PCM output is rounded and saturated.
pub fn write(path: &Path, samples: &[f64], encoding: Encoding) -> CliResult<()> {
    let mut w = WavWriter::create(path, encoding.spec()).map_err(|e| hound_err(path, e))?;
    for &x in samples {
        let r = match encoding {
            Encoding::Pcm16 => w.write_sample((x * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
            Encoding::Float32 => w.write_sample(x as f32),
        };
        r.map_err(|e| hound_err(path, e))?;
    }
    w.finalize().map_err(|e| hound_err(path, e))
}
