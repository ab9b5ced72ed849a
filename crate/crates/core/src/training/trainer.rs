use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use super::data::{ModelUtterance, Normalizers};
use super::TrainConfig;
use crate::batch::BatchSchedule;
use crate::checkpoint;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::eval::{MetricsReport, Pooling};
use crate::frontend::{zscore_unapply, NormalizationStats, StatsScope};
use crate::inversion::{AblationVariant, InversionConfig, InversionModel};
use crate::nn::{Adam, Graph, Grads, ParamStore};
use crate::sdn::{SdnConfig, SdnModel};

pub const CHECKPOINT_KIND: &str = "safn-checkpoint";

/// One evaluation record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsLine {
    pub step: u64,
    /// Mean per-frame training loss since the previous record.
    pub train_loss: f64,
    /// Per-frame validation loss; NaN without a validation split.
    pub val_loss: f64,
    pub val_rmse: f64,
    pub val_cc: f64,
    pub wall_time_s: f64,
}

impl MetricsLine {
    pub fn to_line(&self) -> String {
        format!(
            "step={} train_loss={:.6} val_loss={:.6} val_rmse={:.4} val_cc={:.4} wall_time_s={:.2}",
            self.step, self.train_loss, self.val_loss, self.val_rmse, self.val_cc, self.wall_time_s
        )
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: InversionModel,
    pub adam: Adam,
    pub step: u64,
    pub best: Option<ParamStore>,
    pub best_val_loss: f64,
    pub best_step: u64,
    pub stale_evals: usize,
    window_loss: f64,
    window_frames: usize,
}

impl TrainState {
    pub fn new(model: InversionModel, config: &TrainConfig) -> Self {
        let adam = Adam::new(config.adam(), &model.store);
        TrainState {
            model,
            adam,
            step: 0,
            best: None,
            best_val_loss: f64::INFINITY,
            best_step: 0,
            stale_evals: 0,
            window_loss: 0.0,
            window_frames: 0,
        }
    }

    /// Parameters with the best validation loss so far, or the current ones
    /// when no validation has happened.
    pub fn best_model(&self) -> InversionModel {
        let mut m = self.model.clone();
        if let Some(best) = &self.best {
            m.store = best.clone();
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub lines: Vec<MetricsLine>,
    /// Per-frame loss of the first batch this call processed.
    pub first_batch_loss: f64,
    /// Per-frame loss of the last batch this call processed.
    pub last_batch_loss: f64,
    pub stopped_early: bool,
}

fn utterance_loss(
    model: &InversionModel,
    store_graph: &mut Graph,
    u: &ModelUtterance,
    alpha: f64,
    beta: f64,
    weight: f64,
) -> Result<crate::nn::Var> {
    let (loss, _) = model
        .loss_graph(store_graph, &u.input(), &u.lip, &u.tongue, alpha, beta)
        .map_err(|e| Error::Data(format!("{}: {e}", u.id)))?;
    Ok(store_graph.scale(loss, weight))
}

/// Per-frame combined loss summed over a set of utterances.
pub fn mean_loss(model: &InversionModel, utts: &[ModelUtterance], config: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for u in utts {
        let mut g = Graph::new(&model.store);
        let l = utterance_loss(model, &mut g, u, config.alpha, config.beta, 1.0)?;
        total += g.scalar(l);
        frames += u.frames();
    }
    Ok(total / frames.max(1) as f64)
}

/// Tongue predictions in mm for each utterance.
pub fn predict_mm(model: &InversionModel, utts: &[ModelUtterance], tongue: &NormalizationStats) -> Result<Vec<Array2<f64>>> {
    utts.iter()
        .map(|u| Ok(zscore_unapply(&model.predict(&u.input())?.tongue, tongue)))
        .collect()
}

pub fn evaluate(
    model: &InversionModel,
    utts: &[ModelUtterance],
    tongue: &NormalizationStats,
    scenario: &str,
    seed: u64,
    pooling: Pooling,
) -> Result<(MetricsReport, Vec<Array2<f64>>)> {
    let preds = predict_mm(model, utts, tongue)?;
    let pairs: Vec<_> = preds.iter().zip(utts).map(|(p, u)| (p.view(), u.tongue_mm.view())).collect();
    let report = MetricsReport::from_pairs(&pairs, scenario, model.variant.name(), seed, pooling)?;
    Ok((report, preds))
}

/// Minimises the combined lip/tongue loss with Adam from `state.step` up to
/// `config.iterations`. Each step sums per-utterance gradients over a batch;
/// this equals padding the batch and masking the padded frames. The best
/// validation parameters are tracked in `state`; `on_eval` sees every
/// evaluation record.
pub fn train_safn(
    state: &mut TrainState,
    train: &[ModelUtterance],
    validation: &[ModelUtterance],
    tongue_stats: &NormalizationStats,
    config: &TrainConfig,
    on_eval: &mut dyn FnMut(&TrainState, &MetricsLine) -> Result<()>,
) -> Result<TrainSummary> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Split("training split is empty".into()));
    }
    let started = Instant::now();
    let mut schedule = BatchSchedule::new(train.len(), config.batch_size, config.seed);
    let mut summary = TrainSummary {
        lines: Vec::new(),
        first_batch_loss: f64::NAN,
        last_batch_loss: f64::NAN,
        stopped_early: false,
    };
    let val_cap = config.max_eval_utterances.unwrap_or(usize::MAX).min(validation.len());
    let validation = &validation[..val_cap];

    while state.step < config.iterations {
        let batch = schedule.batch(state.step);
        let frames: usize = batch.iter().map(|&i| train[i].frames()).sum();
        let mut grads = Grads::zeros_like(&state.model.store);
        let mut batch_loss = 0.0;
        for &i in &batch {
            let mut g = Graph::new(&state.model.store);
            let l = utterance_loss(&state.model, &mut g, &train[i], config.alpha, config.beta, 1.0)?;
            batch_loss += g.scalar(l);
            grads.add_assign(&g.backward(l));
        }
        if !batch_loss.is_finite() || !grads.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|&i| train[i].id.as_str()).collect();
            return Err(Error::Numeric(format!(
                "loss became non-finite at step {} (batch {}); best parameters are from step {}",
                state.step + 1,
                ids.join(","),
                state.best_step
            )));
        }
        let per_frame = batch_loss / frames as f64;
        if summary.first_batch_loss.is_nan() {
            summary.first_batch_loss = per_frame;
        }
        summary.last_batch_loss = per_frame;
        grads.clip_global_norm(config.gradient_clip_norm);
        state.adam.update(&mut state.model.store, &grads);
        state.step += 1;
        state.window_loss += batch_loss;
        state.window_frames += frames;

        if state.step.is_multiple_of(config.eval_every) || state.step == config.iterations {
            let line = evaluation_line(state, validation, tongue_stats, config, started.elapsed().as_secs_f64())?;
            log::info!("{}", line.to_line());
            state.window_loss = 0.0;
            state.window_frames = 0;
            let improved = if validation.is_empty() {
                true
            } else {
                line.val_loss < state.best_val_loss
            };
            if improved {
                state.best_val_loss = line.val_loss;
                state.best_step = state.step;
                state.best = Some(state.model.store.clone());
                state.stale_evals = 0;
            } else {
                state.stale_evals += 1;
            }
            on_eval(state, &line)?;
            summary.lines.push(line);
            if config.patience.is_some_and(|p| state.stale_evals >= p) {
                summary.stopped_early = true;
                break;
            }
        }
    }
    Ok(summary)
}

fn evaluation_line(
    state: &TrainState,
    validation: &[ModelUtterance],
    tongue_stats: &NormalizationStats,
    config: &TrainConfig,
    wall: f64,
) -> Result<MetricsLine> {
    let train_loss = state.window_loss / state.window_frames.max(1) as f64;
    let (val_loss, val_rmse, val_cc) = if validation.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let loss = mean_loss(&state.model, validation, config)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss non-finite at step {}", state.step)));
        }
        let (report, _) = evaluate(&state.model, validation, tongue_stats, "validation", config.seed, Pooling::Pooled)?;
        (loss, report.mean_rmse, report.mean_cc)
    };
    Ok(MetricsLine {
        step: state.step,
        train_loss,
        val_loss,
        val_rmse,
        val_cc,
        wall_time_s: wall,
    })
}

/// Continues training a generic model on the target speaker's fine-tune
/// split with the reduced schedule. There is no target validation split, so
/// the final parameters are kept.
pub fn fine_tune(
    generic: &InversionModel,
    fine_tune: &[ModelUtterance],
    tongue_stats: &NormalizationStats,
    config: &TrainConfig,
) -> Result<(InversionModel, TrainSummary)> {
    if fine_tune.is_empty() {
        return Err(Error::Split("fine-tune split is empty".into()));
    }
    let ft_config = config.fine_tune_schedule();
    if ft_config.iterations == 0 {
        return Ok((
            generic.clone(),
            TrainSummary {
                lines: Vec::new(),
                first_batch_loss: f64::NAN,
                last_batch_loss: f64::NAN,
                stopped_early: false,
            },
        ));
    }
    let mut state = TrainState::new(generic.clone(), &ft_config);
    let summary = train_safn(&mut state, fine_tune, &[], tongue_stats, &ft_config, &mut |_, _| Ok(()))?;
    Ok((state.model, summary))
}

/// The configuration a checkpoint must agree with to be resumed. The
/// iteration budget is excluded so a run can be extended.
#[derive(Serialize)]
struct ResumeKey<'a> {
    inversion: &'a InversionConfig,
    variant: AblationVariant,
    train: TrainConfig,
    sdn: Option<&'a SdnConfig>,
}

pub fn resume_hash(inversion: &InversionConfig, variant: AblationVariant, train: &TrainConfig, sdn: Option<&SdnConfig>) -> Result<String> {
    let mut train = train.clone();
    train.iterations = 0;
    checkpoint::config_hash(&ResumeKey {
        inversion,
        variant,
        train,
        sdn,
    })
}

/// A self-contained training checkpoint: inversion parameters (current and
/// best), optimizer state, normalisation statistics and the frozen SDN.
#[derive(Debug, Clone)]
pub struct SafnCheckpoint {
    pub state: TrainState,
    pub train_config: TrainConfig,
    pub normalizers: Normalizers,
    pub sdn: Option<SdnModel>,
    pub scenario: String,
}

impl SafnCheckpoint {
    pub fn config_hash(&self) -> Result<String> {
        resume_hash(
            &self.state.model.config,
            self.state.model.variant,
            &self.train_config,
            self.sdn.as_ref().map(|s| &s.config),
        )
    }

    /// Refuses to resume under a different configuration.
    pub fn check_compatible(
        &self,
        inversion: &InversionConfig,
        variant: AblationVariant,
        train: &TrainConfig,
        sdn: Option<&SdnConfig>,
    ) -> Result<()> {
        let expected = resume_hash(inversion, variant, train, sdn)?;
        let found = self.config_hash()?;
        if expected != found {
            return Err(Error::Config(format!(
                "checkpoint config hash {found} does not match the requested configuration {expected}"
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let s = &self.state;
        let mut c = Container::new(CHECKPOINT_KIND);
        c.set("config_hash", self.config_hash()?)
            .set("variant", s.model.variant)
            .set("scenario", &self.scenario)
            .set("step", s.step)
            .set("seed", self.train_config.seed)
            .set("best_step", s.best_step)
            .set("best_val_loss", s.best_val_loss)
            .set("stale_evals", s.stale_evals)
            .set("window_loss", s.window_loss)
            .set("window_frames", s.window_frames)
            .set("adam_step", s.adam.step)
            .set("has_best", s.best.is_some())
            .set("has_sdn", self.sdn.is_some())
            .set("normalizers_fitted_on", self.normalizers.fitted_on.join(","));
        checkpoint::embed_config_as(&mut c, "inversion.", &s.model.config)?;
        checkpoint::embed_config_as(&mut c, "train.", &self.train_config)?;
        checkpoint::push_store(&mut c, "param.", &s.model.store);
        if let Some(best) = &s.best {
            checkpoint::push_store(&mut c, "best.", best);
        }
        checkpoint::push_mats(&mut c, "adam.m.", &s.adam.m);
        checkpoint::push_mats(&mut c, "adam.v.", &s.adam.v);
        checkpoint::push_stats(&mut c, "norm.acoustic", &self.normalizers.acoustic);
        checkpoint::push_stats(&mut c, "norm.lip", &self.normalizers.lip);
        checkpoint::push_stats(&mut c, "norm.tongue", &self.normalizers.tongue);
        if let Some(sdn) = &self.sdn {
            checkpoint::embed_config_as(&mut c, "sdn_config.", &sdn.config)?;
            sdn.write_params(&mut c, "sdn.");
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Data(format!("expected a training checkpoint, found kind `{}`", c.kind)));
        }
        let inversion: InversionConfig = checkpoint::extract_config_as(c, "inversion.")?;
        let train_config: TrainConfig = checkpoint::extract_config_as(c, "train.")?;
        let variant: AblationVariant = c.get("variant")?.parse()?;
        let mut model = InversionModel::new(inversion, variant, 0)?;
        checkpoint::load_store(c, "param.", &mut model.store)?;
        let best = if c.get("has_best")? == "true" {
            let mut b = model.store.clone();
            checkpoint::load_store(c, "best.", &mut b)?;
            Some(b)
        } else {
            None
        };
        let mut adam = Adam::new(train_config.adam(), &model.store);
        adam.step = c.get_parsed("adam_step")?;
        adam.m = checkpoint::load_mats(c, "adam.m.", &adam.m)?;
        adam.v = checkpoint::load_mats(c, "adam.v.", &adam.v)?;
        let sdn = if c.get("has_sdn")? == "true" {
            let cfg: SdnConfig = checkpoint::extract_config_as(c, "sdn_config.")?;
            Some(SdnModel::read_params(cfg, c, "sdn.")?)
        } else {
            None
        };
        let fitted = c.get("normalizers_fitted_on")?;
        let normalizers = Normalizers {
            acoustic: checkpoint::load_stats(c, "norm.acoustic", StatsScope::Global)?,
            lip: checkpoint::load_stats(c, "norm.lip", StatsScope::Global)?,
            tongue: checkpoint::load_stats(c, "norm.tongue", StatsScope::Global)?,
            fitted_on: fitted.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect(),
        };
        let state = TrainState {
            model,
            adam,
            step: c.get_parsed("step")?,
            best,
            best_val_loss: c.get_parsed("best_val_loss")?,
            best_step: c.get_parsed("best_step")?,
            stale_evals: c.get_parsed("stale_evals")?,
            window_loss: c.get_parsed("window_loss")?,
            window_frames: c.get_parsed("window_frames")?,
        };
        let ck = SafnCheckpoint {
            state,
            train_config,
            normalizers,
            sdn,
            scenario: c.get("scenario")?.to_string(),
        };
        let stored = c.get("config_hash")?;
        if stored != ck.config_hash()? {
            return Err(Error::Checksum {
                expected: stored.to_string(),
                found: ck.config_hash()?,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
