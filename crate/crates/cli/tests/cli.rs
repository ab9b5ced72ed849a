use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use safn_core::corpus::est::{write_est_track, EstEncoding};
use safn_core::corpus::synth::{synth_corpus, SynthConfig};
use safn_core::corpus::CorpusManifest;
use safn_core::eval::MetricsReport;

const TINY: &str = r#"
[synth]
n_speakers = 2
utterances_per_speaker = 10

[sdn]
speaker_channels = [8, 8]
dense_layers = 1
dense_growth = 4
speaker_dim = 8
content_channels = [8, 8]
decoder_channels = [8, 8]
batch_size = 4
steps = 4
eval_every = 2

[inversion]
conv_channels = 4
afn_layers = 1
afn_hidden = 8
afn_fc = 8
ain_layers = 1
ain_hidden = 8
ain_fc = 8
d_p = 4

[train]
learning_rate = 0.002
batch_size = 2
iterations = 4
eval_every = 2
"#;

fn safn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = safn(args);
    assert!(
        out.status.success(),
        "safn {args:?} failed ({}): {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = safn(args);
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Every file under `dir` with its contents, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn only_child(dir: &Path, prefix: &str) -> PathBuf {
    let found: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(found.len(), 1, "{prefix}* in {}: {found:?}", dir.display());
    found[0].clone()
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("tiny.toml");
        fs::write(&config, TINY).unwrap();
        Workspace {
            config: s(&config),
            _tmp: tmp,
            root,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn synth(&self, name: &str, seed: &str) -> PathBuf {
        let out = self.path(name);
        ok(&["synth", "--config", &self.config, "--seed", seed, "--out", &s(&out)]);
        out
    }
}

/// Three utterances as EST tracks plus 16-bit WAV files in a speaker folder.
fn est_fixture(dir: &Path) {
    let cfg = SynthConfig {
        n_speakers: 1,
        utterances_per_speaker: 3,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg, 2).unwrap();
    let spk = dir.join("spk01");
    fs::create_dir_all(&spk).unwrap();
    for u in &corpus.utterances {
        fs::write(spk.join(format!("{}.ema", u.id)), write_est_track(&u.ema, EstEncoding::BinaryLittle)).unwrap();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: u.audio.rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(spk.join(format!("{}.wav", u.id)), spec).unwrap();
        for &x in &u.audio.samples {
            w.write_sample((x.clamp(-1.0, 1.0) * 32767.0) as i16).unwrap();
        }
        w.finalize().unwrap();
    }
}

#[test]
fn synth_is_reproducible() {
    let ws = Workspace::new();
    let a = ws.synth("a", "3");
    let b = ws.synth("b", "3");
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 2 * 10 + 2, "{:?}", sa.keys());
    for (name, bytes) in &sa {
        if name != Path::new("manifest.txt") {
            assert_eq!(Some(bytes), sb.get(name), "{}", name.display());
        }
    }
    let m = CorpusManifest::load(&a).unwrap();
    assert_eq!(m.speakers.len(), 2);
    assert_eq!(m.utterances.len(), 20);
}

#[test]
fn config_errors_exit_with_two() {
    let ws = Workspace::new();
    let out = s(&ws.path("x"));
    let err = fails_with(&["synth", "--config", &ws.config, "--set", "synth.n_speakers=0", "--out", &out], 2);
    assert!(err.contains("n_speakers"), "{err}");
    fails_with(&["synth", "--config", &ws.config, "--set", "synth.no_such_key=1", "--out", &out], 2);
    fails_with(&["synth", "--config", &s(&ws.path("missing.toml")), "--out", &out], 2);
}

#[test]
fn convert_est_corpus() {
    let ws = Workspace::new();
    let input = ws.path("raw");
    est_fixture(&input);
    let before = snapshot(&input);

    let out1 = ws.path("conv1");
    let stdout = ok(&["convert", "--input", &s(&input), "--name", "fixture", "--out", &s(&out1)]);
    assert!(stdout.contains('3'), "{stdout}");
    let m = CorpusManifest::load(&out1).unwrap();
    assert_eq!(m.utterances.len(), 3);
    assert_eq!(m.speakers, vec!["spk01".to_string()]);
    assert_eq!(snapshot(&input), before, "input tree was modified");

    // a second conversion gives byte-identical utterance files
    let out2 = ws.path("conv2");
    ok(&["convert", "--input", &s(&input), "--name", "fixture", "--out", &s(&out2)]);
    let (a, b) = (snapshot(&out1), snapshot(&out2));
    for (name, bytes) in a.iter().filter(|(n, _)| n.extension().is_some_and(|e| e == "safn")) {
        assert_eq!(Some(bytes), b.get(name), "{}", name.display());
    }

    // converted files go through again unchanged
    let out3 = ws.path("conv3");
    ok(&["convert", "--input", &s(&out1), "--name", "fixture", "--out", &s(&out3)]);
    let c = snapshot(&out3);
    for (name, bytes) in a.iter().filter(|(n, _)| n.extension().is_some_and(|e| e == "safn")) {
        assert_eq!(Some(bytes), c.get(name), "{}", name.display());
    }

    // refuses to write into a non-empty directory
    fails_with(&["convert", "--input", &s(&input), "--name", "fixture", "--out", &s(&out1)], 2);
}

#[test]
fn convert_rejects_unrecognised_layout() {
    let ws = Workspace::new();
    let empty = ws.path("empty");
    fs::create_dir_all(&empty).unwrap();
    let err = fails_with(&["convert", "--input", &s(&empty), "--name", "x", "--out", &s(&ws.path("o"))], 3);
    assert!(err.contains("<utt>.ema") && err.contains("<utt>.wav"), "{err}");
}

#[test]
fn train_resume_finetune_eval_infer_plot() {
    let ws = Workspace::new();
    let corpus = ws.synth("corpus", "1");
    let runs = ws.path("runs");
    let base = [
        "--config",
        &ws.config,
        "--corpus",
        &s(&corpus),
        "--out",
        &s(&runs),
        "--scenario",
        "S3",
        "--target-speaker",
        "spk02",
    ];
    let with = |head: &[&str], tail: &[&str]| -> Vec<String> {
        head.iter().chain(&base).chain(tail).map(|x| x.to_string()).collect()
    };
    let run = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let stdout = run(with(&["train", "--variant", "safn"], &[]));
    assert!(stdout.contains("4 steps"), "{stdout}");
    let train_dir = only_child(&runs, "train-");
    let ckpt = train_dir.join("checkpoint.safn");
    let metrics = fs::read_to_string(train_dir.join("metrics.log")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.lines().all(|l| l.starts_with("step=") && l.contains("val_cc=")), "{metrics}");

    // extend the budget; any other config change is refused
    let stdout = run(with(
        &["train", "--variant", "safn", "--resume", &s(&ckpt)],
        &["--set", "train.iterations=6"],
    ));
    assert!(stdout.contains("6 steps"), "{stdout}");
    let changed = with(
        &["train", "--variant", "safn", "--resume", &s(&ckpt)],
        &["--set", "train.learning_rate=0.5"],
    );
    fails_with(&changed.iter().map(String::as_str).collect::<Vec<_>>(), 2);

    let stdout = run(with(&["finetune", "--checkpoint", &s(&ckpt)], &[]));
    assert!(stdout.contains("test CC"), "{stdout}");
    let ft_dir = only_child(&runs, "finetune-");
    for f in ["checkpoint.safn", "report-generic.toml", "report-finetuned.toml", "config.toml"] {
        assert!(ft_dir.join(f).is_file(), "{f}");
    }

    let stdout = run(with(&["eval", "--checkpoint", &s(&ckpt)], &[]));
    assert!(stdout.lines().any(|l| l.starts_with("S3")), "{stdout}");
    let eval_dir = only_child(&runs, "eval-");
    let report = MetricsReport::load(&only_child(&eval_dir, "report-")).unwrap();
    assert_eq!(report.channels.len(), 6);
    assert!(report.mean_rmse.is_finite());

    let utt = corpus.join("spk02_000.safn");
    let stdout = run(vec!["infer".into(), "--checkpoint".into(), s(&ckpt), "--input".into(), s(&utt), "--out".into(), s(&runs)]);
    assert!(stdout.contains("12 channels"), "{stdout}");
    assert!(only_child(&runs, "infer-").join("spk02_000.pred.safn").is_file());

    run(vec![
        "plot".into(),
        "--report".into(),
        s(&only_child(&eval_dir, "report-")),
        "--checkpoint".into(),
        s(&ckpt),
        "--utterance".into(),
        "spk02_000".into(),
        "--corpus".into(),
        s(&corpus),
        "--out".into(),
        s(&runs),
    ]);
    let plot_dir = only_child(&runs, "plot-");
    for f in ["cc_bars.svg", "spk02_000.svg"] {
        let svg = fs::read_to_string(plot_dir.join(f)).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"), "{f}");
    }
}

#[test]
fn eval_all_variants_gives_five_rows() {
    let ws = Workspace::new();
    let corpus = ws.synth("corpus", "4");
    let runs = ws.path("runs");
    let args = [
        "eval",
        "--variant",
        "all",
        "--csv",
        "--config",
        &ws.config,
        "--corpus",
        &s(&corpus),
        "--out",
        &s(&runs),
        "--scenario",
        "S2",
    ];
    ok(&args);
    let dir = only_child(&runs, "eval-");
    let csv = fs::read_to_string(dir.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6, "{csv}");
    for v in ["baseline", "safn-s", "safn-a", "safn-s-a", "safn"] {
        assert!(csv.lines().any(|l| l.split(',').any(|c| c == v)), "{v} missing:\n{csv}");
    }

    // same seed and config reproduce the same table
    let again = ws.path("again");
    let mut args2 = args.to_vec();
    let again_s = s(&again);
    args2[9] = &again_s;
    ok(&args2);
    assert_eq!(fs::read_to_string(only_child(&again, "eval-").join("table.csv")).unwrap(), csv);
}

#[test]
fn eval_requires_existing_corpus() {
    let ws = Workspace::new();
    fails_with(&["eval", "--config", &ws.config, "--corpus", &s(&ws.path("nowhere")), "--out", &s(&ws.path("r"))], 3);
}

#[test]
fn gradcheck_passes_and_reports_every_case() {
    let ws = Workspace::new();
    let stdout = ok(&["gradcheck", "--out", &s(&ws.path("runs"))]);
    for case in ["instance-norm", "adain", "conv1d", "lstm-cell", "blstm-average", "safn", "sdn"] {
        assert!(stdout.lines().any(|l| l.starts_with(case)), "{case} missing:\n{stdout}");
    }
    assert!(stdout.trim_end().ends_with("PASS"), "{stdout}");
}
