//! Acceptance run: one PASS/FAIL line per criterion at its stated tolerance.
//!
//! The process exits 0 regardless of outcome so the workspace test run stays
//! green; set `ACCEPTANCE_STRICT=1` to exit non-zero on any failure.
//! `ACCEPTANCE_ONLY=1,4,9` runs a subset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safn_core::corpus::synth::{synth_corpus, SynthConfig};
use safn_core::corpus::{
    assert_no_leakage, make_splits, CorpusManifest, ScenarioKind, ScenarioSpec, SplitTag, UtteranceRef,
};
use safn_core::eval::{aggregate, MetricsReport};
use safn_core::frontend::FrontendConfig;
use safn_core::inversion::{safn_loss, AblationVariant, InversionConfig, InversionInput, InversionModel};
use safn_core::nn::{Blstm, Graph, Mat, ParamStore};
use safn_core::sdn::{
    adain, instance_norm, linear_probe, pretrain_sdn, AcousticUtterance, NormSiteCheck, PretrainOptions, SdnConfig,
    SdnModel,
};
use safn_core::training::{
    gradcheck_suite, obtain_sdn, prepare_utterances, run_scenario, train_safn, Dataset, Normalizers, ScenarioConfig,
    TrainConfig, TrainState, STEP,
};

struct Verdict {
    pass: bool,
    summary: String,
    notes: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Verdict {
            pass,
            summary: summary.into(),
            notes: Vec::new(),
        }
    }

    fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }
}

type Check = fn() -> Result<Verdict, String>;

fn main() {
    let checks: [(u32, &str, Check); 10] = [
        (1, "reported mean-RMSE arithmetic", table_arithmetic),
        (2, "instance-norm sites and AdaIN identity", norm_sites),
        (3, "gradient checks", gradient_checks),
        (4, "loss hand cases and decomposition", loss_cases),
        (5, "BLSTM direction average", blstm_average),
        (6, "split protocol and leakage guard", split_protocol),
        (7, "SDN disentanglement probes", disentanglement),
        (8, "ablation ordering", ablation_ordering),
        (9, "end-to-end CLI smoke run", end_to_end),
        (10, "single-utterance overfit", overfit),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let verdict = check().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let secs = started.elapsed().as_secs_f64();
        let tag = if verdict.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id:>2} ({name}): {} [{secs:.1}s]", verdict.summary);
        for n in &verdict.notes {
            println!("       {n}");
        }
        if !verdict.pass {
            failed.push(id);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn desk_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

/// Scenario and synthetic-corpus settings from the desk configuration file.
fn desk_config() -> Result<(ScenarioConfig, SynthConfig), String> {
    let text = std::fs::read_to_string(desk_file()).map_err(|e| e.to_string())?;
    let scenario: ScenarioConfig = toml::from_str(&text).map_err(|e| e.to_string())?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| e.to_string())?;
    let synth = match table.get("synth") {
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| e.to_string())?,
        None => SynthConfig::default(),
    };
    Ok((scenario, synth))
}

fn desk_dataset(synth: &SynthConfig, seed: u64) -> Result<Dataset, String> {
    let corpus = synth_corpus(synth, seed).map_err(|e| e.to_string())?;
    Dataset::from_utterances("synthetic", &corpus.utterances, &FrontendConfig::default()).map_err(|e| e.to_string())
}

fn table_arithmetic() -> Result<Verdict, String> {
    // SAFN rows: six tongue-channel RMSEs (mm) and the printed mean
    let rows: [(&str, [f64; 6], f64); 6] = [
        ("S1(G)", [0.789, 0.738, 0.990, 0.619, 1.051, 0.796], 0.830),
        ("S1(M)", [1.289, 1.497, 1.403, 1.442, 1.571, 1.551], 1.459),
        ("S1(H)", [1.419, 1.530, 1.601, 1.552, 1.559, 1.443], 1.517),
        ("S2", [1.488, 1.857, 1.701, 1.631, 1.709, 1.589], 1.662),
        ("S3", [1.411, 1.509, 1.551, 1.563, 1.534, 1.535], 1.507),
        ("S4", [2.184, 3.077, 2.938, 2.621, 2.412, 3.096], 2.721),
    ];
    // the printed values carry three decimals, so a mean landing exactly on
    // a half-unit sits at the tolerance; 1e-12 absorbs binary representation
    let tol = 0.0005 + 1e-12;
    let mut v = Verdict::new(true, "");
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (name, channels, printed) in rows {
        let mean = aggregate(&channels).map_err(|e| e.to_string())?;
        let diff = (mean - printed).abs();
        worst = worst.max(diff);
        if diff > tol {
            bad.push(name);
            v = v.note(format!(
                "{name}: channel mean {mean:.4} vs printed {printed:.3} (off by {diff:.4}); the printed mean is \
                 inconsistent with its own channel values"
            ));
        }
    }
    v.pass = bad.is_empty();
    v.summary = if bad.is_empty() {
        format!("6/6 rows within 0.0005 (max deviation {worst:.6})")
    } else {
        format!("{}/6 rows within 0.0005; mismatched: {}", 6 - bad.len(), bad.join(", "))
    };
    Ok(v)
}

fn small_sdn(activation: safn_core::nn::Activation) -> SdnConfig {
    SdnConfig {
        speaker_channels: vec![8, 12],
        dense_layers: 2,
        dense_growth: 6,
        speaker_dim: 10,
        content_channels: vec![8, 8],
        decoder_channels: vec![8, 8],
        activation,
        ..SdnConfig::default()
    }
}

fn norm_sites() -> Result<Verdict, String> {
    use safn_core::nn::Activation;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut total = NormSiteCheck::empty();
    for (i, cfg) in [SdnConfig::default(), small_sdn(Activation::Relu), small_sdn(Activation::Tanh)]
        .into_iter()
        .enumerate()
    {
        let model = SdnModel::new(cfg.clone(), 10 + i as u64).map_err(|e| e.to_string())?;
        for _ in 0..4 {
            let t = rng.random_range(cfg.min_frames().max(12)..80);
            let scale = rng.random_range(0.5..3.0);
            total.merge(&model.check_norm_sites(&random(&mut rng, t, cfg.feature_dim, scale)));
        }
    }
    let mut adain_err: f64 = 0.0;
    for _ in 0..20 {
        let t = rng.random_range(2..60);
        let c = rng.random_range(1..10);
        let x = random(&mut rng, t, c, 5.0) + &Array1::from_shape_fn(c, |_| rng.random_range(-3.0..3.0));
        let (_, stats) = instance_norm(&x, 1e-5);
        let back = adain(&x, &stats.std, &stats.mean, 1e-5).map_err(|e| e.to_string())?;
        adain_err = adain_err.max((&back - &x).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));
    }
    let mean_ok = total.max_abs_mean <= 1e-5;
    let band_ok = total.min_std >= 0.999 && total.max_std <= 1.001;
    let adain_ok = adain_err <= 1e-6;
    let mut v = Verdict::new(
        mean_ok && band_ok && adain_ok,
        format!(
            "{} sites / {} channels: max |mean| {:.2e}, std in [{:.5}, {:.5}] (band [0.999, 1.001]), AdaIN identity error {:.2e}",
            total.sites, total.channels, total.max_abs_mean, total.min_std, total.max_std, adain_err
        ),
    )
    .note(format!(
        "every channel matches the closed form sqrt(v/(v+eps)) within {:.1e}; {} channels with v < 100 eps are outside the stated domain",
        total.max_closed_form_error, total.low_variance_channels
    ));
    if !band_ok {
        v = v.note("with eps inside the square root the output std is below 0.999 whenever v < ~500 eps");
    }
    Ok(v)
}

fn gradient_checks() -> Result<Verdict, String> {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for case in gradcheck_suite(0) {
        let r = case.run();
        pass &= r.passed;
        worst = worst.max(r.max_rel_error);
        lines.push(format!("{}: {:.2e} (< {:.0e})", case.name, r.max_rel_error, r.tolerance));
    }
    let mut v = Verdict::new(pass, format!("{} cases at step {STEP:.0e}, worst relative error {worst:.2e}", lines.len()));
    for l in lines {
        v = v.note(l);
    }
    Ok(v)
}

fn loss_cases() -> Result<Verdict, String> {
    let err = |e: safn_core::Error| e.to_string();
    let z = Mat::zeros((1, 6));
    let ones = Mat::ones((1, 6));
    let mut lip = Mat::zeros((1, 6));
    lip[[0, 0]] = 2.0;
    let mut l2 = Mat::zeros((2, 6));
    l2[[0, 3]] = 3.0;
    l2[[1, 5]] = -1.0;
    let mut t2 = Mat::zeros((2, 6));
    t2[[1, 1]] = 0.5;
    let z2 = Mat::zeros((2, 6));
    let hand = [
        (safn_loss(&lip, &z, &z, &z, 0.5, 0.5).map_err(err)?, 2.0),
        (safn_loss(&ones, &z, &ones, &z, 0.5, 0.5).map_err(err)?, 6.0),
        (safn_loss(&ones, &ones, &ones, &ones, 0.5, 0.5).map_err(err)?, 0.0),
        // 0.25 * (9 + 1) + 2 * 0.25
        (safn_loss(&l2, &z2, &t2, &z2, 0.25, 2.0).map_err(err)?, 3.0),
    ];
    let hand_err = hand.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut split_err: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(1..30);
        let (alpha, beta) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let m: Vec<Mat> = (0..4).map(|_| random(&mut rng, t, 6, 4.0)).collect();
        let full = safn_loss(&m[0], &m[1], &m[2], &m[3], alpha, beta).map_err(err)?;
        let a = safn_loss(&m[0], &m[1], &m[2], &m[3], alpha, 0.0).map_err(err)?;
        let b = safn_loss(&m[0], &m[1], &m[2], &m[3], 0.0, beta).map_err(err)?;
        split_err = split_err.max((a + b - full).abs() / full.abs().max(1.0));
    }
    Ok(Verdict::new(
        hand_err <= 1e-10 && split_err <= 1e-10,
        format!("{} hand cases, max error {hand_err:.1e}; decomposition over 100 inputs, max relative error {split_err:.1e}", hand.len()),
    ))
}

fn blstm_average() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut store = ParamStore::new();
    let layer = Blstm::new(&mut store, &mut rng, "b", 4, 6);
    for t in [1, 2, 9, 40] {
        let x = random(&mut rng, t, 4, 2.0);
        let mut g = Graph::new(&store);
        let v = g.constant(x);
        let tap = layer.forward_tapped(&mut g, v);
        let expected = (g.value(tap.forward) + g.value(tap.backward)) * 0.5;
        worst = worst.max((g.value(tap.output) - &expected).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));
        checked += 1;
    }
    let model = InversionModel::new(InversionConfig::default(), AblationVariant::Safn, 5).map_err(|e| e.to_string())?;
    let acoustic = random(&mut rng, 20, 39, 1.0);
    let personalized = random(&mut rng, 20, model.config.personalized_dim, 1.0);
    let mut g = Graph::new(&model.store);
    let input = InversionInput {
        acoustic: &acoustic,
        personalized: Some(&personalized),
    };
    let tap = model.forward_graph(&mut g, &input).map_err(|e| e.to_string())?;
    for l in tap.afn.iter().chain([&tap.ain]).flat_map(|r| r.blstm.clone()) {
        let expected = (g.value(l.forward) + g.value(l.backward)) * 0.5;
        worst = worst.max((g.value(l.output) - &expected).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));
        checked += 1;
    }
    Ok(Verdict::new(
        worst <= f64::EPSILON,
        format!("{checked} tapped layers, max |O - (O_l + O_r)/2| = {worst:.1e}"),
    ))
}

fn manifest(sizes: &[usize]) -> CorpusManifest {
    let speakers: Vec<String> = (0..sizes.len()).map(|i| format!("F{:02}", i + 1)).collect();
    let utterances = speakers
        .iter()
        .zip(sizes)
        .flat_map(|(s, &n)| {
            (0..n).map(move |i| UtteranceRef {
                id: format!("{s}_{i:03}"),
                speaker_id: s.clone(),
                path: PathBuf::from(format!("{s}_{i:03}.safn")),
            })
        })
        .collect();
    CorpusManifest {
        name: "random".into(),
        speakers,
        utterances,
        root: PathBuf::new(),
    }
}

fn split_protocol() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let kinds = [ScenarioKind::S1, ScenarioKind::S2, ScenarioKind::S3, ScenarioKind::S4];
    let mut violations = Vec::new();
    let cases = 400;
    for case in 0..cases {
        let sizes: Vec<usize> = (0..rng.random_range(1..7)).map(|_| rng.random_range(1..60)).collect();
        let kind = kinds[case % 4];
        let m = manifest(&sizes);
        let target = m.speakers[rng.random_range(0..sizes.len())].clone();
        let spec = ScenarioSpec {
            kind,
            dataset: "random".into(),
            target_speaker: Some(target.clone()),
            seed: rng.random(),
        };
        let s = make_splits(&m, &spec).map_err(|e| e.to_string())?;
        if !s.is_disjoint() {
            violations.push(format!("case {case}: overlapping splits"));
        }
        if let Err(e) = assert_no_leakage(&m, &spec, &s) {
            violations.push(format!("case {case}: {e}"));
        }
        for (spk, &n) in m.speakers.iter().zip(&sizes) {
            let count = |ids: &[String]| ids.iter().filter(|id| id.starts_with(&format!("{spk}_"))).count();
            let got = (count(&s.train), count(&s.validation), count(&s.fine_tune), count(&s.test));
            let expected = match kind {
                ScenarioKind::S1 if *spk != target => (0, 0, 0, 0),
                ScenarioKind::S1 | ScenarioKind::S2 => (n - 2 * (n / 10), n / 10, 0, n / 10),
                ScenarioKind::S3 if *spk == target => (0, 0, n - n / 5, n / 5),
                ScenarioKind::S4 if *spk == target => (0, 0, 0, n),
                _ => (n - n / 5, n / 5, 0, 0),
            };
            if got != expected {
                violations.push(format!("case {case} {kind} {spk}: {got:?} != {expected:?}"));
            }
        }
    }

    // corrupt an S4 split by moving one held-out utterance into training
    let m = manifest(&[12, 9, 15]);
    let spec = ScenarioSpec {
        kind: ScenarioKind::S4,
        dataset: "random".into(),
        target_speaker: Some("F02".into()),
        seed: 3,
    };
    let mut s = make_splits(&m, &spec).map_err(|e| e.to_string())?;
    let moved = s.test.pop().ok_or("empty S4 test split")?;
    s.train.push(moved);
    let guard = assert_no_leakage(&m, &spec, &s);
    let fired = matches!(guard, Err(safn_core::Error::Leakage(_)));

    let mut v = Verdict::new(
        violations.is_empty() && fired,
        format!(
            "{cases} random manifests, {} violations; leakage guard {}",
            violations.len(),
            if fired { "fired on the corrupted S4 split" } else { "did NOT fire" }
        ),
    );
    for x in violations.into_iter().take(5) {
        v = v.note(x);
    }
    Ok(v)
}

fn rows(vectors: Vec<Vec<f64>>) -> Array2<f64> {
    let d = vectors.first().map_or(0, Vec::len);
    Array2::from_shape_fn((vectors.len(), d), |(i, j)| vectors[i][j])
}

fn disentanglement() -> Result<Verdict, String> {
    let (cfg, synth) = desk_config()?;
    let mut pass = true;
    let mut notes = Vec::new();
    let mut budget_s: f64 = 0.0;
    for seed in 0..3u64 {
        let ds = desk_dataset(&synth, seed)?;
        // stratified: every fifth utterance of each speaker is held out
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for u in ds.utterances.values() {
            let k = seen.entry(u.speaker_id.as_str()).or_default();
            if *k % 5 == 4 { &mut test } else { &mut train }.push(u.acoustic_view());
            *k += 1;
        }
        let started = Instant::now();
        let (model, _) = pretrain_sdn(&train, &cfg.sdn, seed, &PretrainOptions::default()).map_err(|e| e.to_string())?;
        budget_s = budget_s.max(started.elapsed().as_secs_f64());
        let speakers: Vec<&String> = ds.manifest.speakers.iter().collect();
        let label = |u: &AcousticUtterance| speakers.iter().position(|s| **s == u.speaker_id).unwrap();
        let speaker_emb = |set: &[AcousticUtterance]| -> Result<Array2<f64>, String> {
            let v: Result<Vec<_>, _> = set.iter().map(|u| model.encode_speaker(&u.features).map(|e| e.0.to_vec())).collect();
            Ok(rows(v.map_err(|e| e.to_string())?))
        };
        let content_emb = |set: &[AcousticUtterance]| -> Result<Array2<f64>, String> {
            let v: Result<Vec<_>, _> = set
                .iter()
                .map(|u| model.encode_content(&u.features).map(|e| e.0.mean_axis(Axis(0)).unwrap().to_vec()))
                .collect();
            Ok(rows(v.map_err(|e| e.to_string())?))
        };
        let ytr: Vec<usize> = train.iter().map(label).collect();
        let yte: Vec<usize> = test.iter().map(label).collect();
        let k = speakers.len();
        let sp = linear_probe(&speaker_emb(&train)?, &ytr, &speaker_emb(&test)?, &yte, k).map_err(|e| e.to_string())?;
        let ct = linear_probe(&content_emb(&train)?, &ytr, &content_emb(&test)?, &yte, k).map_err(|e| e.to_string())?;
        let ok = sp.accuracy >= 0.90 && ct.accuracy <= ct.chance + 0.15;
        pass &= ok;
        notes.push(format!(
            "seed {seed}: speaker probe {:.3}, content probe {:.3} (chance {:.3}){}",
            sp.accuracy,
            ct.accuracy,
            ct.chance,
            if ok { "" } else { "  <- out of bounds" }
        ));
    }
    pass &= budget_s <= 600.0;
    let mut v = Verdict::new(
        pass,
        format!("3 seeds, speaker >= 0.90 and content <= chance + 0.15; longest SDN training {budget_s:.0}s"),
    );
    for n in notes {
        v = v.note(n);
    }
    Ok(v)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ablation_ordering() -> Result<Verdict, String> {
    let (cfg, synth) = desk_config()?;
    let seeds = [0u64, 1, 2];
    // median over seeds of each variant's test mean CC
    let mut cc: BTreeMap<(ScenarioKind, AblationVariant), Vec<f64>> = BTreeMap::new();
    for &seed in &seeds {
        let ds = desk_dataset(&synth, seed)?;
        for kind in [ScenarioKind::S1, ScenarioKind::S4] {
            let spec = ScenarioSpec {
                kind,
                dataset: "synthetic".into(),
                target_speaker: Some(ds.manifest.speakers[0].clone()),
                seed,
            };
            let sdn = obtain_sdn(&ds, &spec, &cfg.sdn, None).map_err(|e| e.to_string())?;
            for variant in AblationVariant::ALL {
                let out = run_scenario(&ds, &spec, variant, &cfg, Some(&sdn)).map_err(|e| e.to_string())?;
                cc.entry((kind, variant)).or_default().push(out.report.mean_cc);
            }
        }
    }
    let med: BTreeMap<_, f64> = cc.iter().map(|(k, v)| (*k, median(v.clone()))).collect();
    let group = |kind: ScenarioKind, pick: fn(AblationVariant) -> bool| -> (f64, f64) {
        let (mut yes, mut no) = (Vec::new(), Vec::new());
        for v in AblationVariant::ALL {
            if pick(v) { &mut yes } else { &mut no }.push(med[&(kind, v)]);
        }
        (yes.iter().sum::<f64>() / yes.len() as f64, no.iter().sum::<f64>() / no.len() as f64)
    };
    let (s1_with, s1_without) = group(ScenarioKind::S1, |v| v.flags().use_afn);
    let (s4_with, s4_without) = group(ScenarioKind::S4, |v| v.flags().use_sdn);
    let s1_ok = s1_with >= s1_without;
    let s4_ok = s4_with >= s4_without;
    let mut v = Verdict::new(
        s1_ok && s4_ok,
        format!(
            "S1 with AFN {s1_with:.4} vs without {s1_without:.4} ({}); S4 with SDN {s4_with:.4} vs without {s4_without:.4} ({})",
            if s1_ok { "ok" } else { "reversed" },
            if s4_ok { "ok" } else { "reversed" }
        ),
    );
    for kind in [ScenarioKind::S1, ScenarioKind::S4] {
        let line: Vec<String> = AblationVariant::ALL
            .iter()
            .map(|&var| {
                let runs: Vec<String> = cc[&(kind, var)].iter().map(|c| format!("{c:.4}")).collect();
                format!("{} {:.4} [{}]", var.name(), med[&(kind, var)], runs.join(" "))
            })
            .collect();
        v = v.note(format!("{kind} median CC per variant: {}", line.join("; ")));
    }
    let spread = |kind| {
        let all: Vec<f64> = AblationVariant::ALL.iter().map(|&var| med[&(kind, var)]).collect();
        all.iter().cloned().fold(f64::MIN, f64::max) - all.iter().cloned().fold(f64::MAX, f64::min)
    };
    Ok(v.note(format!(
        "spread of variant medians: S1 {:.4}, S4 {:.4}",
        spread(ScenarioKind::S1),
        spread(ScenarioKind::S4)
    )))
}

fn safn(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_safn"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "safn {} exited with {}: {}",
            args.first().unwrap_or(&""),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn single_child(dir: &Path, prefix: &str) -> Result<PathBuf, String> {
    let found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(prefix)))
        .collect();
    match found.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(format!("expected one {prefix}* entry in {}, found {}", dir.display(), found.len())),
    }
}

fn end_to_end() -> Result<Verdict, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("corpus");
    let runs = tmp.path().join("runs");
    let config = desk_file();
    let (config, corpus_s, runs_s) = (
        config.to_string_lossy().into_owned(),
        corpus.to_string_lossy().into_owned(),
        runs.to_string_lossy().into_owned(),
    );
    let common = ["--config", &config, "--seed", "0"];
    let started = Instant::now();

    safn(&[&["synth"], &common[..], &["--out", &corpus_s]].concat())?;
    let scenario = ["--corpus", &corpus_s, "--out", &runs_s, "--scenario", "S1", "--target-speaker", "spk01"];
    safn(&[&["pretrain-sdn"], &common[..], &scenario[..]].concat())?;
    let sdn = single_child(&runs, "pretrain-sdn-")?.join("sdn.safn");
    let sdn_s = sdn.to_string_lossy().into_owned();
    safn(&[&["train", "--variant", "safn", "--sdn", &sdn_s], &common[..], &scenario[..]].concat())?;
    let ckpt = single_child(&runs, "train-")?.join("checkpoint.safn");
    let ckpt_s = ckpt.to_string_lossy().into_owned();
    let table = safn(&[&["eval", "--checkpoint", &ckpt_s], &common[..], &scenario[..]].concat())?;
    let report_path = single_child(&single_child(&runs, "eval-")?, "report-")?;
    let report = MetricsReport::load(&report_path).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();

    let mut v = Verdict::new(
        report.mean_cc >= 0.8 && secs <= 900.0,
        format!(
            "synth -> pretrain-sdn -> train S1 -> eval: test mean CC {:.4} (>= 0.8), RMSE {:.4} mm, {secs:.0}s",
            report.mean_cc, report.mean_rmse
        ),
    );
    for l in table.lines() {
        v = v.note(l.to_string());
    }
    Ok(v)
}

fn overfit() -> Result<Verdict, String> {
    let e = |e: safn_core::Error| e.to_string();
    let synth = SynthConfig {
        n_speakers: 1,
        utterances_per_speaker: 1,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&synth, 0).map_err(e)?;
    let ds = Dataset::from_utterances("synthetic", &corpus.utterances, &FrontendConfig::default()).map_err(e)?;
    let raw: Vec<_> = ds.utterances.values().collect();
    let norms = Normalizers::fit(SplitTag::Train, &raw).map_err(e)?;
    let sdn_cfg = SdnConfig {
        speaker_channels: vec![16, 16],
        dense_layers: 1,
        dense_growth: 8,
        speaker_dim: 16,
        content_channels: vec![16, 16],
        decoder_channels: vec![16, 16],
        ..SdnConfig::default()
    };
    let sdn = SdnModel::new(sdn_cfg, 0).map_err(e)?;
    let one = prepare_utterances(&raw, &norms, Some(&sdn)).map_err(e)?;
    let inv = InversionConfig {
        conv_channels: 8,
        afn_layers: 1,
        afn_hidden: 16,
        afn_fc: 16,
        ain_layers: 1,
        ain_hidden: 16,
        ain_fc: 16,
        d_p: 8,
        personalized_dim: sdn.config.personalized_dim(),
        ..InversionConfig::default()
    };
    let model = InversionModel::new(inv, AblationVariant::Safn, 0).map_err(e)?;
    let rmse = |a: &Array2<f64>, b: &Array2<f64>| ((a - b).mapv(|x| x * x).sum() / a.len() as f64).sqrt();
    let heads = |m: &InversionModel| -> Result<(f64, f64), String> {
        let p = m.predict(&one[0].input()).map_err(e)?;
        let lip = p.lip.ok_or("model has no lip head")?;
        Ok((rmse(&lip, &one[0].lip), rmse(&p.tongue, &one[0].tongue)))
    };
    let (lip0, tongue0) = heads(&model)?;
    let cfg = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 1,
        iterations: 500,
        eval_every: 500,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(model, &cfg);
    train_safn(&mut state, &one, &[], &norms.tongue, &cfg, &mut |_, _| Ok(())).map_err(e)?;
    let (lip, tongue) = heads(&state.model)?;
    Ok(Verdict::new(
        lip < 0.1 * lip0 && tongue < 0.1 * tongue0,
        format!(
            "500 steps on one utterance ({} frames): lip RMSE {lip0:.3} -> {lip:.4} ({:.3}x), tongue RMSE {tongue0:.3} -> {tongue:.4} ({:.3}x)",
            one[0].frames(),
            lip / lip0,
            tongue / tongue0
        ),
    ))
}
