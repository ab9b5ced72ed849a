use ndarray::Array2;
use safn_core::corpus::synth::{synth_corpus, SynthConfig};
use safn_core::corpus::{make_splits, ScenarioKind, ScenarioSpec, SplitTag};
use safn_core::frontend::FrontendConfig;
use safn_core::inversion::{safn_loss, InversionConfig, InversionModel};
use safn_core::nn::{Graph, ParamStore};
use safn_core::sdn::{pretrain_sdn, PretrainOptions, SdnConfig, SdnModel};
use safn_core::training::{
    fine_tune, mean_loss, prepare_utterances, run_scenario, train_safn, AblationVariant, Dataset, MetricsLine,
    ModelUtterance, Normalizers, SafnCheckpoint, ScenarioConfig, TrainConfig, TrainState,
};
use safn_core::Error;

fn dataset(speakers: usize, per_speaker: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n_speakers: speakers,
        utterances_per_speaker: per_speaker,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg, seed).unwrap();
    Dataset::from_utterances("synthetic", &corpus.utterances, &FrontendConfig::default()).unwrap()
}

fn small_sdn() -> SdnConfig {
    SdnConfig {
        speaker_channels: vec![16, 16],
        dense_layers: 1,
        dense_growth: 8,
        speaker_dim: 16,
        content_channels: vec![16, 16],
        decoder_channels: vec![16, 16],
        batch_size: 8,
        learning_rate: 2e-3,
        steps: 60,
        eval_every: 30,
        ..SdnConfig::default()
    }
}

fn small_inversion() -> InversionConfig {
    InversionConfig {
        conv_channels: 8,
        afn_layers: 1,
        afn_hidden: 16,
        afn_fc: 16,
        ain_layers: 1,
        ain_hidden: 16,
        ain_fc: 16,
        d_p: 8,
        ..InversionConfig::default()
    }
}

fn small_train(iterations: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        batch_size: 3,
        iterations,
        eval_every: 4,
        ..TrainConfig::default()
    }
}

fn desk_config(iterations: u64) -> ScenarioConfig {
    ScenarioConfig {
        sdn: SdnConfig {
            speaker_channels: vec![32, 32],
            dense_layers: 2,
            dense_growth: 16,
            speaker_dim: 32,
            content_channels: vec![32, 32],
            decoder_channels: vec![32, 32],
            batch_size: 8,
            learning_rate: 2e-3,
            steps: 300,
            eval_every: 100,
            ..SdnConfig::default()
        },
        inversion: InversionConfig {
            afn_hidden: 32,
            afn_fc: 32,
            ain_hidden: 32,
            ain_fc: 32,
            d_p: 16,
            ..small_inversion()
        },
        train: TrainConfig {
            learning_rate: 2e-3,
            batch_size: 5,
            iterations,
            eval_every: 100,
            ..TrainConfig::default()
        },
        pooling: Default::default(),
    }
}

struct Setup {
    model: InversionModel,
    sdn: Option<SdnModel>,
    norms: Normalizers,
    train: Vec<ModelUtterance>,
    validation: Vec<ModelUtterance>,
}

/// Single-speaker splits of a small corpus in model space.
fn setup(variant: AblationVariant, seed: u64) -> Setup {
    let ds = dataset(1, 12, seed);
    let spec = ScenarioSpec {
        kind: ScenarioKind::S1,
        dataset: "synthetic".into(),
        target_speaker: Some("spk01".into()),
        seed,
    };
    let splits = make_splits(&ds.manifest, &spec).unwrap();
    let norms = Normalizers::fit(SplitTag::Train, &ds.select(&splits.train).unwrap()).unwrap();
    let sdn = variant.flags().use_sdn.then(|| SdnModel::new(small_sdn(), seed).unwrap());
    let mut cfg = small_inversion();
    if let Some(s) = &sdn {
        cfg.personalized_dim = s.config.personalized_dim();
    }
    let prep = |ids: &[String]| prepare_utterances(&ds.select(ids).unwrap(), &norms, sdn.as_ref()).unwrap();
    Setup {
        model: InversionModel::new(cfg, variant, seed).unwrap(),
        train: prep(&splits.train),
        validation: prep(&splits.validation),
        sdn,
        norms,
    }
}

fn run(setup: &Setup, state: &mut TrainState, cfg: &TrainConfig) -> Vec<MetricsLine> {
    train_safn(state, &setup.train, &setup.validation, &setup.norms.tongue, cfg, &mut |_, _| Ok(()))
        .unwrap()
        .lines
}

fn without_wall_time(lines: &[MetricsLine]) -> Vec<MetricsLine> {
    lines
        .iter()
        .map(|l| MetricsLine {
            wall_time_s: 0.0,
            ..*l
        })
        .collect()
}

fn bits(store: &ParamStore) -> Vec<u64> {
    store.iter().flat_map(|(_, _, m)| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn resume_continues_the_identical_trajectory() {
    let s = setup(AblationVariant::Safn, 3);
    let cfg = small_train(12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.safn");

    // checkpoint written by the evaluation hook at step 4, as a run would
    let mut straight = TrainState::new(s.model.clone(), &cfg);
    let lines = train_safn(&mut straight, &s.train, &s.validation, &s.norms.tongue, &cfg, &mut |state, line| {
        if line.step == 4 {
            SafnCheckpoint {
                state: state.clone(),
                train_config: cfg.clone(),
                normalizers: s.norms.clone(),
                sdn: s.sdn.clone(),
                scenario: "S1".into(),
            }
            .save(&path)?;
        }
        Ok(())
    })
    .unwrap()
    .lines;

    let mut resumed = SafnCheckpoint::load(&path).unwrap().state;
    assert_eq!(resumed.step, 4);
    let tail = run(&s, &mut resumed, &cfg);

    assert_eq!(bits(&resumed.model.store), bits(&straight.model.store));
    assert_eq!(resumed.adam.step, straight.adam.step);
    assert_eq!(resumed.best_step, straight.best_step);
    let later: Vec<_> = lines.iter().filter(|l| l.step > 4).copied().collect();
    assert_eq!(tail.len(), 2);
    assert_eq!(without_wall_time(&tail), without_wall_time(&later));
}

#[test]
fn fixed_seed_gives_identical_loss_curves() {
    let s = setup(AblationVariant::SafnSA, 1);
    let cfg = small_train(8);
    let mut a = TrainState::new(s.model.clone(), &cfg);
    let mut b = TrainState::new(s.model.clone(), &cfg);
    let la = run(&s, &mut a, &cfg);
    let lb = run(&s, &mut b, &cfg);
    assert_eq!(la.len(), 2);
    assert_eq!(without_wall_time(&la), without_wall_time(&lb));
    assert_eq!(bits(&a.model.store), bits(&b.model.store));
}

#[test]
fn training_moves_afn_and_leaves_the_sdn_frozen() {
    let s = setup(AblationVariant::Safn, 2);
    let sdn_before = bits(&s.sdn.as_ref().unwrap().store);
    let cfg = small_train(4);
    let mut state = TrainState::new(s.model.clone(), &cfg);
    run(&s, &mut state, &cfg);
    assert_eq!(bits(&s.sdn.as_ref().unwrap().store), sdn_before);
    for (id, name, after) in state.model.store.iter() {
        if name.starts_with("afn") {
            assert_ne!(after, s.model.store.get(id), "{name} did not move");
        }
    }
    assert!(state.model.store.iter().any(|(_, n, _)| n.starts_with("afn")));
}

#[test]
fn safn_s_loss_is_the_tongue_term_alone() {
    let s = setup(AblationVariant::SafnS, 4);
    assert!(s.model.afn.is_none());
    let u = &s.train[0];
    let value = |alpha: f64, beta: f64| {
        let mut g = Graph::new(&s.model.store);
        let (l, tap) = s.model.loss_graph(&mut g, &u.input(), &u.lip, &u.tongue, alpha, beta).unwrap();
        assert!(tap.lip.is_none());
        g.scalar(l)
    };
    let pred = s.model.predict(&u.input()).unwrap();
    assert!(pred.lip.is_none());
    let sq: f64 = (&pred.tongue - &u.tongue).mapv(|e| e * e).sum();
    for (alpha, beta) in [(0.5, 0.5), (0.0, 0.5), (3.0, 0.5), (0.9, 1.7)] {
        let v = value(alpha, beta);
        assert!((v - beta * sq).abs() <= 1e-9 * v.abs(), "alpha {alpha}: {v} vs {}", beta * sq);
    }
}

#[test]
fn zero_iteration_fine_tune_keeps_parameters() {
    let s = setup(AblationVariant::SafnA, 5);
    let cfg = TrainConfig {
        fine_tune_iteration_factor: 0.0,
        ..small_train(10)
    };
    let (tuned, _) = fine_tune(&s.model, &s.train, &s.norms.tongue, &cfg).unwrap();
    assert_eq!(bits(&tuned.store), bits(&s.model.store));
}

#[test]
fn empty_splits_are_errors() {
    let s = setup(AblationVariant::Baseline, 6);
    let cfg = small_train(10);
    assert!(matches!(fine_tune(&s.model, &[], &s.norms.tongue, &cfg), Err(Error::Split(_))));
    let mut state = TrainState::new(s.model.clone(), &cfg);
    let r = train_safn(&mut state, &[], &s.validation, &s.norms.tongue, &cfg, &mut |_, _| Ok(()));
    assert!(matches!(r, Err(Error::Split(_))));
}

fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    ((a - b).mapv(|e| e * e).sum() / a.len() as f64).sqrt()
}

#[test]
fn single_utterance_overfits() {
    let s = setup(AblationVariant::Safn, 0);
    let one = vec![s.train[0].clone()];
    let heads = |m: &InversionModel| {
        let p = m.predict(&one[0].input()).unwrap();
        (rmse(&p.lip.unwrap(), &one[0].lip), rmse(&p.tongue, &one[0].tongue))
    };
    let (lip0, tongue0) = heads(&s.model);
    let cfg = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 1,
        iterations: 500,
        eval_every: 500,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(s.model.clone(), &cfg);
    train_safn(&mut state, &one, &[], &s.norms.tongue, &cfg, &mut |_, _| Ok(())).unwrap();
    let (lip, tongue) = heads(&state.model);
    assert!(lip < 0.1 * lip0, "lip rmse {lip0} -> {lip}");
    assert!(tongue < 0.1 * tongue0, "tongue rmse {tongue0} -> {tongue}");
}

#[test]
fn tiny_single_speaker_run_reduces_training_loss() {
    let ds = dataset(1, 40, 7);
    let spec = ScenarioSpec {
        kind: ScenarioKind::S1,
        dataset: "synthetic".into(),
        target_speaker: Some("spk01".into()),
        seed: 7,
    };
    let mut cfg = desk_config(2_000);
    cfg.train.eval_every = 1_000;
    cfg.sdn.steps = 100;
    let out = run_scenario(&ds, &spec, AblationVariant::Safn, &cfg, None).unwrap();
    let train = prepare_utterances(&ds.select(&out.splits.train).unwrap(), &out.normalizers, out.sdn.as_ref()).unwrap();
    let untrained = InversionModel::new(out.model.config.clone(), AblationVariant::Safn, 7).unwrap();
    let before = mean_loss(&untrained, &train, &cfg.train).unwrap();
    let after = mean_loss(&out.state.model, &train, &cfg.train).unwrap();
    assert!(after < 0.2 * before, "train loss {before} -> {after}");
}

#[test]
fn sdn_pretraining_halves_reconstruction_error() {
    let ds = dataset(2, 20, 8);
    let data: Vec<_> = ds.utterances.values().map(|u| u.acoustic_view()).collect();
    let cfg = SdnConfig {
        steps: 2_000,
        eval_every: 250,
        ..small_sdn()
    };
    let (_, log) = pretrain_sdn(&data, &cfg, 8, &PretrainOptions::default()).unwrap();
    assert!(
        log.best_val_l1 < 0.5 * log.initial_val_l1(),
        "L1 {} -> {}",
        log.initial_val_l1(),
        log.best_val_l1
    );
}

#[test]
fn fine_tuning_does_not_hurt_the_target_speaker() {
    for seed in 0..3 {
        let ds = dataset(4, 30, seed);
        let spec = ScenarioSpec {
            kind: ScenarioKind::S3,
            dataset: "synthetic".into(),
            target_speaker: Some("spk01".into()),
            seed,
        };
        let out = run_scenario(&ds, &spec, AblationVariant::Safn, &desk_config(300), None).unwrap();
        let generic = out.generic_report.unwrap().mean_cc;
        assert!(out.report.mean_cc >= generic, "seed {seed}: tuned {} < generic {generic}", out.report.mean_cc);
    }
}

#[test]
fn multi_speaker_scenario_splits_every_speaker() {
    let ds = dataset(8, 10, 9);
    let spec = ScenarioSpec {
        kind: ScenarioKind::S2,
        dataset: "synthetic".into(),
        target_speaker: None,
        seed: 9,
    };
    let out = run_scenario(&ds, &spec, AblationVariant::Baseline, &desk_config(2), None).unwrap();
    for spk in &ds.manifest.speakers {
        let n = |ids: &[String]| ids.iter().filter(|id| ds.get(id).unwrap().speaker_id == *spk).count();
        assert_eq!(
            (n(&out.splits.train), n(&out.splits.validation), n(&out.splits.test)),
            (8, 1, 1),
            "{spk}"
        );
    }
}

#[test]
fn single_speaker_report_covers_all_tongue_channels() {
    let ds = dataset(1, 10, 10);
    let spec = ScenarioSpec {
        kind: ScenarioKind::S1,
        dataset: "synthetic".into(),
        target_speaker: Some("spk01".into()),
        seed: 10,
    };
    let out = run_scenario(&ds, &spec, AblationVariant::SafnA, &desk_config(2), None).unwrap();
    assert_eq!(out.report.channels.len(), 6);
    assert_eq!(out.report.cc.len(), 6);
    assert!(out.report.rmse.iter().all(|v| v.is_finite()));
}

#[test]
fn held_out_speaker_feeds_nothing() {
    let ds = dataset(3, 10, 11);
    let spec = ScenarioSpec {
        kind: ScenarioKind::S4,
        dataset: "synthetic".into(),
        target_speaker: Some("spk02".into()),
        seed: 11,
    };
    let mut cfg = desk_config(2);
    cfg.sdn.steps = 2;
    let out = run_scenario(&ds, &spec, AblationVariant::SafnS, &cfg, None).unwrap();
    let s = &out.splits;
    for id in s.train.iter().chain(&s.validation).chain(&s.fine_tune) {
        assert_ne!(ds.get(id).unwrap().speaker_id, "spk02");
    }
    assert!(!out.normalizers.fitted_on.contains(&"spk02".to_string()));
    assert!(!out.sdn.unwrap().pretrained_on.contains(&"spk02".to_string()));
    assert!(out.test.iter().all(|u| u.speaker_id == "spk02"));
}

#[test]
fn loss_helper_agrees_with_graph_loss() {
    let s = setup(AblationVariant::Safn, 12);
    let u = &s.train[0];
    let p = s.model.predict(&u.input()).unwrap();
    let direct = safn_loss(&u.lip, p.lip.as_ref().unwrap(), &u.tongue, &p.tongue, 0.5, 0.5).unwrap();
    let cfg = small_train(1);
    let via = mean_loss(&s.model, std::slice::from_ref(u), &cfg).unwrap() * u.frames() as f64;
    assert!((direct - via).abs() <= 1e-9 * direct, "{direct} vs {via}");
}
