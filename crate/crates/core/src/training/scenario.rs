use serde::{Deserialize, Serialize};

use super::data::{prepare_utterances, Dataset, ModelUtterance, Normalizers};
use super::trainer::{evaluate, fine_tune, train_safn, TrainState, TrainSummary};
use super::TrainConfig;
use crate::corpus::{assert_no_leakage, make_splits, ScenarioKind, ScenarioSpec, SplitAssignment, SplitTag};
use crate::error::{Error, Result};
use crate::eval::{MetricsReport, Pooling};
use crate::inversion::{AblationVariant, InversionConfig, InversionModel};
use crate::sdn::{pretrain_sdn, AcousticUtterance, PretrainOptions, SdnConfig, SdnModel};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub sdn: SdnConfig,
    pub inversion: InversionConfig,
    pub train: TrainConfig,
    pub pooling: Pooling,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub splits: SplitAssignment,
    pub normalizers: Normalizers,
    pub sdn: Option<SdnModel>,
    /// Model the report was computed with (fine-tuned for S3).
    pub model: InversionModel,
    pub state: TrainState,
    pub summary: TrainSummary,
    pub report: MetricsReport,
    /// S3 only: the generic model's score on the same test split.
    pub generic_report: Option<MetricsReport>,
    pub test: Vec<ModelUtterance>,
}

/// Utterances the SDN may be pretrained on: every utterance in the corpus
/// except those of a speaker held out entirely (S4 target).
pub fn sdn_pretraining_set(dataset: &Dataset, spec: &ScenarioSpec) -> Vec<AcousticUtterance> {
    let excluded = match spec.kind {
        ScenarioKind::S4 => spec.target_speaker.as_deref(),
        _ => None,
    };
    dataset
        .utterances
        .values()
        .filter(|u| Some(u.speaker_id.as_str()) != excluded)
        .map(|u| u.acoustic_view())
        .collect()
}

/// Verifies the speaker-independent protocol: the held-out speaker feeds no
/// parameter or statistic.
pub fn check_held_out(spec: &ScenarioSpec, norms: &Normalizers, sdn: Option<&SdnModel>) -> Result<()> {
    if spec.kind != ScenarioKind::S4 {
        return Ok(());
    }
    let Some(target) = &spec.target_speaker else {
        return Err(Error::Split("S4 requires a target speaker".into()));
    };
    if norms.fitted_on.contains(target) {
        return Err(Error::Leakage(format!("normalisation statistics include held-out speaker {target}")));
    }
    if let Some(sdn) = sdn {
        if sdn.pretrained_on.contains(target) {
            return Err(Error::Leakage(format!("SDN was pretrained on held-out speaker {target}")));
        }
    }
    Ok(())
}

pub fn obtain_sdn(
    dataset: &Dataset,
    spec: &ScenarioSpec,
    cfg: &SdnConfig,
    supplied: Option<&SdnModel>,
) -> Result<SdnModel> {
    match supplied {
        Some(m) => Ok(m.clone()),
        None => {
            let data = sdn_pretraining_set(dataset, spec);
            let (m, log) = pretrain_sdn(&data, cfg, spec.seed, &PretrainOptions::default())?;
            log::info!(
                "SDN pretrained: val L1 {:.4} -> {:.4}",
                log.initial_val_l1(),
                log.best_val_l1
            );
            Ok(m)
        }
    }
}

/// Splits, (optionally) pretrains the SDN, trains the inversion model,
/// fine-tunes for S3 and scores the test split in mm.
pub fn run_scenario(
    dataset: &Dataset,
    spec: &ScenarioSpec,
    variant: AblationVariant,
    cfg: &ScenarioConfig,
    sdn: Option<&SdnModel>,
) -> Result<ScenarioOutcome> {
    let splits = make_splits(&dataset.manifest, spec)?;
    assert_no_leakage(&dataset.manifest, spec, &splits)?;
    let train_raw = dataset.select(&splits.train)?;
    let normalizers = Normalizers::fit(SplitTag::Train, &train_raw)?;

    let sdn = if variant.flags().use_sdn {
        Some(obtain_sdn(dataset, spec, &cfg.sdn, sdn).map_err(|e| e.in_stage("sdn"))?)
    } else {
        None
    };
    check_held_out(spec, &normalizers, sdn.as_ref())?;

    let mut inv_cfg = cfg.inversion.clone();
    if let Some(s) = &sdn {
        inv_cfg.personalized_dim = s.config.personalized_dim();
    }
    let prep = |ids: &[String]| -> Result<Vec<ModelUtterance>> {
        prepare_utterances(&dataset.select(ids)?, &normalizers, sdn.as_ref())
    };
    let train = prep(&splits.train)?;
    let validation = prep(&splits.validation)?;
    let test = prep(&splits.test)?;
    if test.is_empty() {
        return Err(Error::Split(format!("{}: test split is empty", spec.kind)));
    }

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = spec.seed;
    let model = InversionModel::new(inv_cfg, variant, spec.seed)?;
    let mut state = TrainState::new(model, &train_cfg);
    let summary = train_safn(&mut state, &train, &validation, &normalizers.tongue, &train_cfg, &mut |_, _| Ok(()))
        .map_err(|e| e.in_stage("train"))?;
    let generic = state.best_model();
    let scenario = spec.kind.to_string();

    let (model, generic_report) = if spec.kind == ScenarioKind::S3 {
        let ft = prep(&splits.fine_tune)?;
        let (generic_report, _) = evaluate(&generic, &test, &normalizers.tongue, &scenario, spec.seed, cfg.pooling)?;
        let (tuned, _) = fine_tune(&generic, &ft, &normalizers.tongue, &train_cfg).map_err(|e| e.in_stage("fine-tune"))?;
        (tuned, Some(generic_report))
    } else {
        (generic, None)
    };
    let (report, _) = evaluate(&model, &test, &normalizers.tongue, &scenario, spec.seed, cfg.pooling)?;
    Ok(ScenarioOutcome {
        splits,
        normalizers,
        sdn,
        model,
        state,
        summary,
        report,
        generic_report,
        test,
    })
}
