use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ndarray::{concatenate, Axis};
use safn_core::container::Container;
use safn_core::corpus::synth::synth_corpus;
use safn_core::corpus::{
    assert_no_leakage, make_splits, Audio, ChannelMap, CorpusManifest, EmaTrajectory, ScenarioKind, ScenarioSpec,
    SplitAssignment, SplitTag, Utterance, LIP_CHANNELS, TONGUE_CHANNELS,
};
use safn_core::eval::{cc_bar_chart_svg, report_table, trajectory_overlay_svg, MetricsReport, TableFormat, TONGUE_LABELS};
use safn_core::frontend::{acoustic_features, zscore_apply, zscore_unapply, AcousticFeatures, MfccConfig};
use safn_core::inversion::{AblationVariant, InversionInput, InversionModel};
use safn_core::sdn::{pretrain_sdn as run_pretraining, PretrainOptions, SdnModel};
use safn_core::training::{
    check_held_out, evaluate, fine_tune as run_fine_tune, gradcheck_suite, obtain_sdn, predict_mm, prepare_utterances,
    run_scenario, sdn_pretraining_set, train_safn, Dataset, Normalizers, SafnCheckpoint, TrainState,
};
use safn_core::Error;

use crate::config::RunConfig;
use crate::io::{convert_corpus, empty_output_dir, fresh_run_dir, read_wav, ConvertOptions};
use crate::Common;

const CHECKPOINT_FILE: &str = "checkpoint.safn";
const SDN_FILE: &str = "sdn.safn";
const CONFIG_FILE: &str = "config.toml";

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    resolve_with(common, None)
}

/// Like [`resolve`], but falls back to `fallback` when `--config` is absent
/// and the file exists (the config saved next to a checkpoint).
fn resolve_with(common: &Common, fallback: Option<&Path>) -> anyhow::Result<RunConfig> {
    let file = common
        .config
        .clone()
        .or_else(|| fallback.filter(|p| p.is_file()).map(Path::to_path_buf));
    let mut cfg = RunConfig::resolve(file.as_deref(), &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = &common.scenario {
        cfg.scenario.kind = s.parse()?;
    }
    if let Some(v) = &common.variant {
        if v != "all" {
            cfg.scenario.variant = v.parse()?;
        }
    }
    if let Some(t) = &common.target_speaker {
        cfg.scenario.target_speaker = Some(t.clone());
    }
    if let Some(c) = &common.corpus {
        cfg.corpus.path = Some(c.clone());
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    if let Some(m) = &common.mfcc_config {
        cfg.frontend.mfcc = MfccConfig::load(m)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_config(ckpt: &Path) -> Option<PathBuf> {
    ckpt.parent().map(|d| d.join(CONFIG_FILE))
}

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let path = cfg
        .corpus
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("a corpus is required (--corpus or corpus.path)".into()))?;
    let manifest = CorpusManifest::load(path)?;
    log::info!(
        "corpus {}: {} utterances, {} speakers",
        manifest.name,
        manifest.utterances.len(),
        manifest.speakers.len()
    );
    Ok(Dataset::load(&manifest, &cfg.frontend)?)
}

fn splits_for(cfg: &RunConfig, ds: &Dataset) -> anyhow::Result<(ScenarioSpec, SplitAssignment)> {
    let spec = cfg.scenario_spec(&ds.manifest.name);
    let splits = make_splits(&ds.manifest, &spec)?;
    assert_no_leakage(&ds.manifest, &spec, &splits)?;
    log::info!(
        "{}: train {} / validation {} / fine-tune {} / test {}",
        spec.kind,
        splits.train.len(),
        splits.validation.len(),
        splits.fine_tune.len(),
        splits.test.len()
    );
    Ok((spec, splits))
}

/// Creates the run directory and records the resolved configuration.
fn start_run(cfg: &RunConfig, command: &str) -> anyhow::Result<PathBuf> {
    let dir = fresh_run_dir(&cfg.output, command)?;
    let text = format!("# config hash {}\n{}", cfg.hash()?, cfg.to_toml()?);
    write_file(&dir.join(CONFIG_FILE), text)?;
    log::info!("run directory {}", dir.display());
    Ok(dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn append_line(path: &Path, line: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn convert(
    common: &Common,
    input: &Path,
    name: &str,
    channel_map: Option<&Path>,
    speaker: Option<String>,
) -> anyhow::Result<()> {
    let cfg = resolve(common)?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::Config("convert needs --out <directory>".into()))?;
    let map = match channel_map.or(cfg.corpus.channel_map.as_deref()) {
        Some(p) => Some(ChannelMap::load(p)?),
        None => None,
    };
    let summary = convert_corpus(&ConvertOptions {
        input,
        out: &out,
        name,
        channel_map: map,
        speaker,
    })?;
    println!(
        "converted {} utterances ({} speakers, {} skipped) into {}",
        summary.converted,
        summary.manifest.speakers.len(),
        summary.skipped,
        out.display()
    );
    Ok(())
}

pub fn synth(common: &Common) -> anyhow::Result<()> {
    let cfg = resolve(common)?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::Config("synth needs --out <directory>".into()))?;
    let corpus = synth_corpus(&cfg.synth, cfg.seed)?;
    empty_output_dir(&out)?;
    let manifest = corpus.save(&out)?;
    let synth_toml = toml::to_string(&cfg.synth).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join("synth.toml"), format!("seed = {}\n{synth_toml}", cfg.seed))?;
    println!(
        "wrote {} utterances for {} speakers to {}",
        manifest.utterances.len(),
        manifest.speakers.len(),
        out.display()
    );
    Ok(())
}

pub fn pretrain_sdn(common: &Common) -> anyhow::Result<()> {
    let cfg = resolve(common)?;
    let ds = load_dataset(&cfg)?;
    let spec = cfg.scenario_spec(&ds.manifest.name);
    if spec.kind == ScenarioKind::S4 {
        // validates the target speaker
        make_splits(&ds.manifest, &spec)?;
    }
    let data = sdn_pretraining_set(&ds, &spec);
    let run = start_run(&cfg, "pretrain-sdn")?;
    let ckpt = run.join(SDN_FILE);
    let (model, log) = run_pretraining(
        &data,
        &cfg.sdn,
        cfg.seed,
        &PretrainOptions {
            checkpoint_path: Some(ckpt.clone()),
            max_eval_utterances: None,
        },
    )?;
    model.save(&ckpt)?;
    let mut text = String::new();
    for p in &log.points {
        writeln!(text, "step={} train_l1={:.6} val_l1={:.6}", p.step, p.train_l1, p.val_l1)?;
    }
    write_file(&run.join("metrics.log"), text)?;
    println!(
        "SDN pretrained on {} utterances ({} speakers): validation L1 {:.4} -> {:.4} (best step {}); checkpoint {}",
        data.len(),
        model.pretrained_on.len(),
        log.initial_val_l1(),
        log.best_val_l1,
        log.best_step,
        ckpt.display()
    );
    Ok(())
}

pub fn train(common: &Common, sdn_path: Option<&Path>, resume: Option<&Path>) -> anyhow::Result<()> {
    let cfg = resolve_with(common, resume.and_then(checkpoint_config).as_deref())?;
    let ds = load_dataset(&cfg)?;
    let (spec, splits) = splits_for(&cfg, &ds)?;
    let variant = cfg.scenario.variant;
    let tcfg = cfg.train_config();
    let run = start_run(&cfg, "train")?;

    let (mut state, normalizers, sdn) = match resume {
        Some(path) => {
            let ck = SafnCheckpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let mut inv = cfg.inversion.clone();
            if let Some(s) = &ck.sdn {
                inv.personalized_dim = s.config.personalized_dim();
            }
            ck.check_compatible(&inv, variant, &tcfg, ck.sdn.as_ref().map(|s| &s.config))?;
            log::info!("resuming from step {}", ck.state.step);
            (ck.state, ck.normalizers, ck.sdn)
        }
        None => {
            let normalizers = Normalizers::fit(SplitTag::Train, &ds.select(&splits.train)?)?;
            let sdn = if variant.flags().use_sdn {
                let m = match sdn_path {
                    Some(p) => SdnModel::load(p).with_context(|| format!("loading {}", p.display()))?,
                    None => {
                        let m = obtain_sdn(&ds, &spec, &cfg.sdn, None)?;
                        m.save(&run.join(SDN_FILE))?;
                        m
                    }
                };
                Some(m)
            } else {
                None
            };
            let mut inv = cfg.inversion.clone();
            if let Some(s) = &sdn {
                inv.personalized_dim = s.config.personalized_dim();
            }
            let model = InversionModel::new(inv, variant, cfg.seed)?;
            (TrainState::new(model, &tcfg), normalizers, sdn)
        }
    };
    check_held_out(&spec, &normalizers, sdn.as_ref())?;
    let prep = |ids: &[String]| prepare_utterances(&ds.select(ids)?, &normalizers, sdn.as_ref());
    let train = prep(&splits.train)?;
    let validation = prep(&splits.validation)?;

    let metrics = run.join("metrics.log");
    let ckpt_path = run.join(CHECKPOINT_FILE);
    let scenario = spec.kind.to_string();
    let snapshot = |state: &TrainState| SafnCheckpoint {
        state: state.clone(),
        train_config: tcfg.clone(),
        normalizers: normalizers.clone(),
        sdn: sdn.clone(),
        scenario: scenario.clone(),
    };
    let summary = train_safn(&mut state, &train, &validation, &normalizers.tongue, &tcfg, &mut |st, line| {
        append_line(&metrics, &line.to_line()).map_err(|e| Error::Data(format!("{e:#}")))?;
        snapshot(st).save(&ckpt_path)
    })?;
    snapshot(&state).save(&ckpt_path)?;
    println!(
        "{} {}: {} steps, batch loss {:.4} -> {:.4}, best validation loss {:.5} at step {}{}; checkpoint {}",
        scenario,
        variant,
        state.step,
        summary.first_batch_loss,
        summary.last_batch_loss,
        state.best_val_loss,
        state.best_step,
        if summary.stopped_early { " (stopped early)" } else { "" },
        ckpt_path.display()
    );
    Ok(())
}

pub fn finetune(common: &Common, checkpoint: &Path) -> anyhow::Result<()> {
    let cfg = resolve_with(common, checkpoint_config(checkpoint).as_deref())?;
    if cfg.scenario.kind != ScenarioKind::S3 {
        return Err(Error::Config("finetune applies to scenario S3 (--scenario S3 --target-speaker ID)".into()).into());
    }
    let ds = load_dataset(&cfg)?;
    let (spec, splits) = splits_for(&cfg, &ds)?;
    let ck = SafnCheckpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    check_held_out(&spec, &ck.normalizers, ck.sdn.as_ref())?;
    let prep = |ids: &[String]| prepare_utterances(&ds.select(ids)?, &ck.normalizers, ck.sdn.as_ref());
    let ft = prep(&splits.fine_tune)?;
    let test = prep(&splits.test)?;
    let tcfg = cfg.train_config();
    let generic = ck.state.best_model();
    let run = start_run(&cfg, "finetune")?;
    let (tuned, summary) = run_fine_tune(&generic, &ft, &ck.normalizers.tongue, &tcfg)?;
    let tuned_ck = SafnCheckpoint {
        state: TrainState::new(tuned.clone(), &tcfg.fine_tune_schedule()),
        train_config: ck.train_config.clone(),
        normalizers: ck.normalizers.clone(),
        sdn: ck.sdn.clone(),
        scenario: "S3".into(),
    };
    let path = run.join(CHECKPOINT_FILE);
    tuned_ck.save(&path)?;
    let (before, _) = evaluate(&generic, &test, &ck.normalizers.tongue, "S3-generic", cfg.seed, cfg.scenario.pooling)?;
    let (after, _) = evaluate(&tuned, &test, &ck.normalizers.tongue, "S3", cfg.seed, cfg.scenario.pooling)?;
    before.save(&run.join("report-generic.toml"))?;
    after.save(&run.join("report-finetuned.toml"))?;
    println!(
        "fine-tuned on {} utterances ({} steps, loss {:.4} -> {:.4}): test CC {:.4} -> {:.4}, RMSE {:.4} -> {:.4} mm; checkpoint {}",
        ft.len(),
        summary.lines.last().map_or(0, |l| l.step),
        summary.first_batch_loss,
        summary.last_batch_loss,
        before.mean_cc,
        after.mean_cc,
        before.mean_rmse,
        after.mean_rmse,
        path.display()
    );
    Ok(())
}

pub fn eval(common: &Common, checkpoints: &[PathBuf], csv: bool) -> anyhow::Result<()> {
    let fallback = checkpoints.first().and_then(|c| checkpoint_config(c));
    let cfg = resolve_with(common, fallback.as_deref())?;
    let ds = load_dataset(&cfg)?;
    let (spec, splits) = splits_for(&cfg, &ds)?;
    let scenario = spec.kind.to_string();
    let mut reports = Vec::new();
    if checkpoints.is_empty() {
        let variants: Vec<AblationVariant> = match common.variant.as_deref() {
            Some("all") => AblationVariant::ALL.to_vec(),
            _ => vec![cfg.scenario.variant],
        };
        let sdn = if variants.iter().any(|v| v.flags().use_sdn) {
            Some(obtain_sdn(&ds, &spec, &cfg.sdn, None)?)
        } else {
            None
        };
        for v in variants {
            log::info!("training {v} for {scenario}");
            let outcome = run_scenario(&ds, &spec, v, &cfg.scenario_config(), sdn.as_ref())?;
            reports.push(outcome.report);
        }
    } else {
        for path in checkpoints {
            let ck = SafnCheckpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            check_held_out(&spec, &ck.normalizers, ck.sdn.as_ref())?;
            let test = prepare_utterances(&ds.select(&splits.test)?, &ck.normalizers, ck.sdn.as_ref())?;
            let (report, _) = evaluate(
                &ck.state.best_model(),
                &test,
                &ck.normalizers.tongue,
                &scenario,
                cfg.seed,
                cfg.scenario.pooling,
            )?;
            reports.push(report);
        }
    }
    let run = start_run(&cfg, "eval")?;
    for (i, r) in reports.iter().enumerate() {
        r.save(&run.join(format!("report-{}-{}.toml", i + 1, r.variant)))?;
    }
    let text = report_table(&reports, TableFormat::Text)?;
    let table_csv = report_table(&reports, TableFormat::Csv)?;
    write_file(&run.join("table.txt"), &text)?;
    write_file(&run.join("table.csv"), &table_csv)?;
    print!("{text}");
    if csv {
        print!("{table_csv}");
    }
    Ok(())
}

fn load_input_features(path: &Path, cfg: &RunConfig) -> anyhow::Result<(AcousticFeatures, Option<Audio>)> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("wav") {
        let audio = read_wav(path)?;
        return Ok((acoustic_features(&audio, &cfg.frontend)?, Some(audio)));
    }
    let c = Container::read(path)?;
    match c.kind.as_str() {
        "utterance" => {
            let utt = safn_core::corpus::interchange::from_container(&c)?;
            Ok((acoustic_features(&utt.audio, &cfg.frontend)?, Some(utt.audio)))
        }
        "features" => Ok((AcousticFeatures::from_container(&c)?, None)),
        other => Err(Error::Data(format!(
            "{}: expected a WAV file, an utterance or a feature file, found `{other}`",
            path.display()
        ))
        .into()),
    }
}

pub fn infer(common: &Common, checkpoint: &Path, input: &Path) -> anyhow::Result<()> {
    let cfg = resolve_with(common, checkpoint_config(checkpoint).as_deref())?;
    let ck = SafnCheckpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (features, audio) = load_input_features(input, &cfg)?;
    features.check_finite()?;
    let acoustic = zscore_apply(&features.data, &ck.normalizers.acoustic);
    let personalized = match &ck.sdn {
        Some(s) => Some(s.personalized(&features)?),
        None => None,
    };
    let model = ck.state.best_model();
    let pred = model.predict(&InversionInput {
        acoustic: &acoustic,
        personalized: personalized.as_ref(),
    })?;
    let tongue = zscore_unapply(&pred.tongue, &ck.normalizers.tongue);
    let (channels, data) = match &pred.lip {
        Some(lip) => {
            let lip = zscore_unapply(lip, &ck.normalizers.lip);
            let mut names: Vec<String> = LIP_CHANNELS.iter().map(|s| s.to_string()).collect();
            names.extend(TONGUE_CHANNELS.iter().map(|s| s.to_string()));
            (names, concatenate![Axis(1), lip, tongue])
        }
        None => (TONGUE_CHANNELS.iter().map(|s| s.to_string()).collect(), tongue),
    };
    let stem = input.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
    let utt = Utterance {
        id: format!("{stem}-pred"),
        speaker_id: "predicted".into(),
        audio: audio.unwrap_or(Audio {
            samples: Vec::new(),
            rate_hz: 16_000,
        }),
        ema: EmaTrajectory::new(channels, features.frame_rate_hz, data.mapv(|v| v as f32))?,
    };
    let run = start_run(&cfg, "infer")?;
    let out = run.join(format!("{stem}.pred.safn"));
    safn_core::corpus::interchange::write_interchange(&utt, &out)?;
    println!(
        "predicted {} frames × {} channels ({}); wrote {}",
        utt.ema.frames(),
        utt.ema.channels.len(),
        utt.ema.channels.join(","),
        out.display()
    );
    Ok(())
}

pub fn plot(common: &Common, reports: &[PathBuf], checkpoint: Option<&Path>, utterance: Option<&str>) -> anyhow::Result<()> {
    if reports.is_empty() && checkpoint.is_none() {
        return Err(Error::Config("plot needs --report files or --checkpoint with --utterance".into()).into());
    }
    let cfg = resolve_with(common, checkpoint.and_then(checkpoint_config).as_deref())?;
    let mut written = Vec::new();
    let mut figures = Vec::new();
    if !reports.is_empty() {
        let loaded: Vec<MetricsReport> = reports
            .iter()
            .map(|p| MetricsReport::load(p).with_context(|| format!("loading {}", p.display())))
            .collect::<anyhow::Result<_>>()?;
        figures.push(("cc_bars.svg".to_string(), cc_bar_chart_svg(&loaded)?));
    }
    if let Some(ckpt) = checkpoint {
        let id = utterance.ok_or_else(|| Error::Config("--checkpoint needs --utterance ID".into()))?;
        let ck = SafnCheckpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
        let ds = load_dataset(&cfg)?;
        let u = ds.get(id)?;
        let prepared = prepare_utterances(&[u], &ck.normalizers, ck.sdn.as_ref())?;
        let pred = predict_mm(&ck.state.best_model(), &prepared, &ck.normalizers.tongue)?;
        let title = format!("{id}: predicted (dashed) vs measured tongue, mm");
        let svg = trajectory_overlay_svg(pred[0].view(), u.tongue_mm.view(), &TONGUE_LABELS, &title)?;
        figures.push((format!("{id}.svg"), svg));
    }
    let run = start_run(&cfg, "plot")?;
    for (name, svg) in figures {
        let p = run.join(name);
        write_file(&p, svg)?;
        written.push(p);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn gradcheck(common: &Common) -> anyhow::Result<()> {
    let cfg = resolve(common)?;
    let mut text = String::new();
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for case in gradcheck_suite(cfg.seed) {
        let r = case.run();
        worst = worst.max(r.max_rel_error);
        writeln!(text, "{:<14} {}", case.name, r.summary())?;
        if !r.passed {
            failed.push(case.name);
        }
    }
    writeln!(
        text,
        "max relative error {worst:.3e}: {}",
        if failed.is_empty() { "PASS" } else { "FAIL" }
    )?;
    let run = start_run(&cfg, "gradcheck")?;
    write_file(&run.join("gradcheck.txt"), &text)?;
    print!("{text}");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}
