mod error;
mod settings;
mod wav;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use snr_enhance::enhance::{enhance, EnhanceConfig, EnhancePath};
use snr_enhance::features::{extract_features, FeatureKind};
use snr_enhance::metrics::evaluate;
use snr_enhance::mlp::MlpModel;
use snr_enhance::stft::StftEngine;
use snr_enhance::training::{build_dataset, parse_manifest, train, SignalSource};

use error::{CliError, CliResult};
use settings::{parse_dims, Mode, Settings};

const THREADS_ENV: &str = "SNR_ENHANCE_THREADS";

#[derive(Parser)]
#[command(name = "snr-enhance", version, about = "Single-channel speech enhancement")]
struct Cli {
    /// Configuration file with `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance a WAV file, or every WAV file in a directory.
    Enhance(EnhanceArgs),
    /// Train a mask estimator from a corpus manifest.
    Train(TrainArgs),
    /// Dump the feature stream of a WAV file.
    Features(FeaturesArgs),
    /// Compare a test signal with its clean reference.
    Eval(EvalArgs),
}

fn parse_kind(s: &str) -> Result<FeatureKind, String> {
    s.parse().map_err(|e: snr_enhance::Error| e.to_string())
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// nonml or ml
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<FeatureKind>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Minimum gain in dB.
    #[arg(long, allow_hyphen_values = true)]
    gmin_db: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Lines of `speech=<wav> noise=<wav> snr=<dB> peak=<dB> seed=<n>`;
    /// paths are relative to the manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Model file to write.
    #[arg(short, long)]
    output: PathBuf,
    /// Per-epoch loss history; defaults to the model path with `.history.tsv`.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<FeatureKind>,
    /// Hidden layer widths, comma-separated.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<FeatureKind>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

struct WavSource {
    root: PathBuf,
}

impl SignalSource for WavSource {
    fn load(&self, path: &Path) -> snr_enhance::Result<Vec<f64>> {
        wav::read(&self.root.join(path))
            .map(|(x, _)| x)
            .map_err(|e| snr_enhance::Error::Corpus(e.to_string()))
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn enhance_config(settings: &Settings) -> CliResult<EnhanceConfig> {
    let path = match settings.mode {
        Mode::NonMl => EnhancePath::NonMl,
        Mode::Ml => {
            let model_path = settings
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("--mode ml requires --model".into()))?;
            EnhancePath::Ml {
                kind: settings.kind,
                model: Arc::new(MlpModel::load(model_path)?),
            }
        }
    };
    let cfg = EnhanceConfig {
        g_min: 10f64.powf(settings.g_min_db / 20.0),
        path,
        analysis: settings.analysis,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn enhance_file(input: &Path, output: &Path, cfg: &EnhanceConfig) -> CliResult<usize> {
    let (x, encoding) = wav::read(input)?;
    let y = enhance(&x, cfg)?;
    wav::write(output, &y, encoding)?;
    Ok(cfg.analysis.stft.frame_count(x.len()))
}

fn cmd_enhance(args: EnhanceArgs, mut settings: Settings) -> CliResult<()> {
    if let Some(m) = args.mode {
        settings.mode = m;
    }
    if let Some(k) = args.kind {
        settings.kind = k;
    }
    if let Some(p) = args.model {
        settings.model = Some(p);
    }
    if let Some(g) = args.gmin_db {
        settings.g_min_db = g;
    }
    let cfg = enhance_config(&settings)?;
    let t0 = Instant::now();
    let frames = if args.input.is_dir() {
        std::fs::create_dir_all(&args.output).map_err(|e| CliError::io(&args.output, e))?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&args.input)
            .map_err(|e| CliError::io(&args.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        files
            .par_iter()
            .map(|f| enhance_file(f, &args.output.join(f.file_name().expect("listed file")), &cfg))
            .collect::<CliResult<Vec<_>>>()?
            .into_iter()
            .sum()
    } else {
        enhance_file(&args.input, &args.output, &cfg)?
    };
    println!("frames={frames} seconds={:.3}", t0.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_train(args: TrainArgs, mut settings: Settings) -> CliResult<()> {
    if let Some(k) = args.kind {
        settings.kind = k;
    }
    if let Some(d) = &args.dims {
        settings.hidden = parse_dims(d).map_err(CliError::Usage)?;
    }
    if let Some(s) = args.seed {
        settings.train.rng_seed = s;
    }
    if let Some(e) = args.max_epochs {
        settings.train.max_epochs = e;
    }
    let text = std::fs::read_to_string(&args.manifest).map_err(|e| CliError::io(&args.manifest, e))?;
    let specs = parse_manifest(&text)?;
    let source = WavSource {
        root: args.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let t0 = Instant::now();
    let data = build_dataset(&specs, settings.kind, &settings.dataset(), &source)?;
    let n_bins = settings.analysis.stft.n_bins();
    let mut dims = vec![settings.kind.stacked_dim(n_bins)];
    dims.extend(&settings.hidden);
    dims.push(n_bins);
    let (model, history) = train(&data, &dims, &settings.train)?;
    model.save(&args.output)?;
    let history_path = args.history.unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".history.tsv");
        PathBuf::from(p)
    });
    std::fs::write(&history_path, history.to_tsv()).map_err(|e| CliError::io(&history_path, e))?;
    let best = &history.epochs[history.best_epoch];
    println!(
        "epochs={} best_epoch={} val_loss={:.6} seconds={:.3}",
        history.len(),
        history.best_epoch,
        best.val_loss,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_features(args: FeaturesArgs, mut settings: Settings) -> CliResult<()> {
    if let Some(k) = args.kind {
        settings.kind = k;
    }
    let (x, _) = wav::read(&args.input)?;
    let spec = StftEngine::new(settings.analysis.stft)?.analyze(&x)?;
    let stream = extract_features(&spec, settings.kind, &settings.analysis)?;
    let file = File::create(&args.output).map_err(|e| CliError::io(&args.output, e))?;
    stream
        .write_to(BufWriter::new(file))
        .map_err(|e| CliError::io(&args.output, e))?;
    println!("frames={} dim={}", stream.n_frames(), stream.dim());
    Ok(())
}

fn cmd_eval(args: EvalArgs, settings: Settings) -> CliResult<()> {
    let (clean, _) = wav::read(&args.clean)?;
    let (test, _) = wav::read(&args.test)?;
    if clean.len() != test.len() {
        return Err(CliError::Usage(format!(
            "length mismatch: clean has {} samples, test has {}",
            clean.len(),
            test.len()
        )));
    }
    let report = evaluate(&clean, &test, settings.analysis.stft)?;
    println!("segsnr_db={:.4} lsd_db={:.4}", report.seg_snr_db, report.lsd_db);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    match cli.command {
        Command::Enhance(a) => cmd_enhance(a, settings),
        Command::Train(a) => cmd_train(a, settings),
        Command::Features(a) => cmd_features(a, settings),
        Command::Eval(a) => cmd_eval(a, settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
