use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use snr_enhance::mlp::{glorot_init, MODEL_MAGIC};
use snr_enhance::stft::StftConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_snr-enhance"));
    c.env_remove("SNR_ENHANCE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_wav(path: &Path, samples: &[f64], rate: u32) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for s in samples {
        w.write_sample((s * 32767.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

fn wav_len(path: &Path) -> usize {
    hound::WavReader::open(path).unwrap().len() as usize
}

/// Deterministic tone-plus-hash-noise test signal.
fn test_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|i| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let r = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            let t = i as f64 / 16_000.0;
            let gate = if (i / 4000) % 2 == 1 { 1.0 } else { 0.0 };
            0.2 * gate * (2.0 * PI * 220.0 * t).sin() + 0.05 * r
        })
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn wav(&self, name: &str, n: usize, seed: u64) -> String {
        write_wav(&self.path(name), &test_signal(n, seed), 16_000);
        self.s(name)
    }
}

#[test]
fn enhance_nonml_writes_synthesis_length() {
    let f = Fixture::new();
    let input = f.wav("in.wav", 20_000, 1);
    let o = run(&["enhance", "-i", &input, "-o", &f.s("out.wav"), "--mode", "nonml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = StftConfig::default();
    assert_eq!(wav_len(&f.path("out.wav")), cfg.synthesis_len(cfg.frame_count(20_000)));
    let line = stdout(&o);
    assert!(line.starts_with(&format!("frames={} seconds=", cfg.frame_count(20_000))), "{line}");
}

#[test]
fn enhance_directory() {
    let f = Fixture::new();
    std::fs::create_dir(f.path("in")).unwrap();
    f.wav("in/a.wav", 9000, 2);
    f.wav("in/b.wav", 12_000, 3);
    let o = bin()
        .args(["enhance", "-i", &f.s("in"), "-o", &f.s("out"), "--gmin-db", "-15"])
        .env("SNR_ENHANCE_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(f.path("out/a.wav").exists() && f.path("out/b.wav").exists());
}

#[test]
fn ml_mode_dimension_mismatch_names_dims() {
    let f = Fixture::new();
    let input = f.wav("in.wav", 8000, 4);
    glorot_init(&[1028, 8, 257], 1).unwrap().save(f.path("m.bin")).unwrap();
    let o = run(&[
        "enhance", "-i", &input, "-o", &f.s("out.wav"), "--mode", "ml", "--kind", "xi+gamma", "--model", &f.s("m.bin"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("1028") && msg.contains("2056"), "{msg}");

    let o = run(&[
        "enhance", "-i", &input, "-o", &f.s("out.wav"), "--mode", "ml", "--kind", "xi", "--model", &f.s("m.bin"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn ml_mode_without_model_is_usage_error() {
    let f = Fixture::new();
    let input = f.wav("in.wav", 8000, 5);
    let o = run(&["enhance", "-i", &input, "-o", &f.s("out.wav"), "--mode", "ml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn wrong_sample_rate_is_format_error() {
    let f = Fixture::new();
    write_wav(&f.path("cd.wav"), &test_signal(8000, 6), 44_100);
    let o = run(&["enhance", "-i", &f.s("cd.wav"), "-o", &f.s("out.wav")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("16000"), "{}", stderr(&o));
    let o = run(&["enhance", "-i", &f.s("missing.wav"), "-o", &f.s("out.wav")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn features_dimensions_and_dump() {
    let f = Fixture::new();
    let input = f.wav("in.wav", 8000, 7);
    for (kind, dim) in [("y", 1028), ("y+n", 2056), ("xi", 1028), ("gamma", 1028), ("xi+gamma", 2056)] {
        let o = run(&["features", "-i", &input, "-o", &f.s("f.bin"), "--kind", kind]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains(&format!("dim={dim}")), "{kind}: {}", stdout(&o));
        let bytes = std::fs::read(f.path("f.bin")).unwrap();
        assert_eq!(&bytes[..8], b"SNRFEAT1");
        let frames = StftConfig::default().frame_count(8000);
        assert_eq!(bytes.len(), 20 + 8 * frames * dim);
    }
    let o = run(&["features", "-i", &input, "-o", &f.s("f.bin"), "--kind", "snr"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("xi+gamma") && msg.contains("gamma"), "{msg}");
}

#[test]
fn eval_output_format() {
    let f = Fixture::new();
    let a = f.wav("a.wav", 8000, 8);
    let o = run(&["eval", "--clean", &a, "--test", &a]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let pairs: Vec<(&str, f64)> = out
        .split_whitespace()
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    assert_eq!(pairs, vec![("segsnr_db", 35.0), ("lsd_db", 0.0)]);
    assert!(out.contains("segsnr_db=35.0000"));

    let b = f.wav("b.wav", 7000, 9);
    let o = run(&["eval", "--clean", &a, "--test", &b]);
    assert_ne!(o.status.code(), Some(0));
    let msg = stderr(&o);
    assert!(msg.contains("8000") && msg.contains("7000"), "{msg}");
}

fn toy_manifest(f: &Fixture) -> String {
    f.wav("s1.wav", 12_000, 10);
    f.wav("s2.wav", 10_000, 11);
    f.wav("noise.wav", 64_000, 12);
    std::fs::write(
        f.path("corpus.txt"),
        "speech=s1.wav noise=noise.wav snr=0 peak=-10 seed=1\nspeech=s2.wav noise=noise.wav snr=5 peak=-20 seed=2\n",
    )
    .unwrap();
    f.s("corpus.txt")
}

#[test]
fn train_is_deterministic_and_writes_history() {
    let f = Fixture::new();
    let manifest = toy_manifest(&f);
    let args = |out: &str| {
        vec![
            "train".to_string(),
            "--manifest".into(),
            manifest.clone(),
            "-o".into(),
            f.s(out),
            "--kind".into(),
            "xi+gamma".into(),
            "--dims".into(),
            "8".into(),
            "--seed".into(),
            "3".into(),
            "--max-epochs".into(),
            "3".into(),
        ]
    };
    let o = bin().args(args("m1.bin")).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin().args(args("m2.bin")).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m1 = std::fs::read(f.path("m1.bin")).unwrap();
    assert_eq!(m1, std::fs::read(f.path("m2.bin")).unwrap());
    assert_eq!(&m1[..8], MODEL_MAGIC);
    let model = snr_enhance::MlpModel::load(f.path("m1.bin")).unwrap();
    assert_eq!(model.dims(), vec![2056, 8, 257]);

    let history = std::fs::read_to_string(f.path("m1.bin.history.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = history.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().enumerate().all(|(i, r)| r.len() == 3 && r[0] == i.to_string()));
}

#[test]
fn malformed_manifest_cites_line() {
    let f = Fixture::new();
    toy_manifest(&f);
    std::fs::write(
        f.path("bad.txt"),
        "# header\nspeech=s1.wav noise=noise.wav snr=0 peak=-10 seed=1\nspeech=s2.wav noise=noise.wav snr=loud peak=-20 seed=2\n",
    )
    .unwrap();
    let o = run(&["train", "--manifest", &f.s("bad.txt"), "-o", &f.s("m.bin"), "--dims", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn config_file_and_flag_precedence() {
    let f = Fixture::new();
    let input = f.wav("in.wav", 8000, 13);
    std::fs::write(f.path("a.cfg"), "# features\nkind = gamma\nbeta = 0.85\n").unwrap();
    let o = run(&["features", "--config", &f.s("a.cfg"), "-i", &input, "-o", &f.s("f.bin")]);
    assert!(stdout(&o).contains("dim=1028"), "{}", stderr(&o));
    let o = run(&["features", "--config", &f.s("a.cfg"), "-i", &input, "-o", &f.s("f.bin"), "--kind", "y+n"]);
    assert!(stdout(&o).contains("dim=2056"), "{}", stderr(&o));

    std::fs::write(f.path("b.cfg"), "kind = gamma\n\nshape = round\n").unwrap();
    let o = run(&["features", "--config", &f.s("b.cfg"), "-i", &input, "-o", &f.s("f.bin")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["denoise"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let f = Fixture::new();
    let input = f.wav("in.wav", 8000, 14);
    let o = bin()
        .args(["enhance", "-i", &input, "-o", &f.s("o.wav")])
        .env("SNR_ENHANCE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
