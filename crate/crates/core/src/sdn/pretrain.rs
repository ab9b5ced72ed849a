use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SdnConfig, SdnModel};
use crate::batch::BatchSchedule;
use crate::corpus::SplitTag;
use crate::error::{Error, Result};
use crate::frontend::{zscore_apply, zscore_fit, AcousticFeatures, StatsScope};
use crate::nn::{Adam, AdamConfig, Graph, Grads, ParamStore};

/// Acoustic-only view of an utterance. The SDN never sees articulatory data;
/// this type has no field that could carry it.
#[derive(Debug, Clone)]
pub struct AcousticUtterance {
    pub id: String,
    pub speaker_id: String,
    pub features: AcousticFeatures,
}

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    /// Best-so-far model is written here after every improving evaluation.
    pub checkpoint_path: Option<PathBuf>,
    /// Cap on utterances used for each evaluation pass.
    pub max_eval_utterances: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainPoint {
    pub step: u64,
    pub train_l1: f64,
    pub val_l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLog {
    pub points: Vec<PretrainPoint>,
    pub best_step: u64,
    pub best_val_l1: f64,
    pub steps_run: u64,
    pub stopped_early: bool,
}

impl PretrainLog {
    pub fn initial_val_l1(&self) -> f64 {
        self.points[0].val_l1
    }
}

fn mean_l1(model: &SdnModel, data: &[Array2<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for x in data {
        let mut g = Graph::new(&model.store);
        let l = model.reconstruction_graph(&mut g, x);
        total += g.scalar(l);
        count += x.len();
    }
    total / count as f64
}

/// Self-supervised pretraining: minimise the mean absolute reconstruction
/// error with Adam. Early-stops on held-out reconstruction error and returns
/// the best model seen.
pub fn pretrain_sdn(
    data: &[AcousticUtterance],
    config: &SdnConfig,
    seed: u64,
    options: &PretrainOptions,
) -> Result<(SdnModel, PretrainLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("SDN pretraining set is empty".into()));
    }
    let mut model = SdnModel::new(config.clone(), seed)?;
    for u in data {
        if u.features.dim() != config.feature_dim {
            return Err(Error::shape(
                "sdn pretraining",
                format!("{} has {} feature columns, expected {}", u.id, u.features.dim(), config.feature_dim),
            ));
        }
        if u.features.frames() < config.min_frames() {
            return Err(Error::Data(format!("{} is shorter than the SDN receptive field", u.id)));
        }
        u.features.check_finite()?;
    }
    let mut speakers: Vec<String> = data.iter().map(|u| u.speaker_id.clone()).collect();
    speakers.sort();
    speakers.dedup();
    model.pretrained_on = speakers;
    let raw: Vec<&Array2<f64>> = data.iter().map(|u| &u.features.data).collect();
    // the whole pretraining set is this network's training side
    model.input_stats = zscore_fit(SplitTag::Train, &raw, StatsScope::Global)?;
    let standardized: Vec<Array2<f64>> = raw.iter().map(|x| zscore_apply(x, &model.input_stats)).collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5d4e_11a7));
    let n_val = if data.len() >= 10 {
        (config.validation_fraction * data.len() as f64).floor() as usize
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train: Vec<Array2<f64>> = train_idx.iter().map(|&i| standardized[i].clone()).collect();
    let mut val: Vec<Array2<f64>> = if val_idx.is_empty() {
        train.clone()
    } else {
        val_idx.iter().map(|&i| standardized[i].clone()).collect()
    };
    if let Some(cap) = options.max_eval_utterances {
        val.truncate(cap.max(1));
    }

    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut schedule = BatchSchedule::new(train.len(), config.batch_size, seed);
    let initial = mean_l1(&model, &val);
    let mut log = PretrainLog {
        points: vec![PretrainPoint {
            step: 0,
            train_l1: initial,
            val_l1: initial,
        }],
        best_step: 0,
        best_val_l1: initial,
        steps_run: 0,
        stopped_early: false,
    };
    let mut best: ParamStore = model.store.clone();
    let mut stale = 0usize;
    let mut window_loss = 0.0;
    let mut window_steps = 0u64;

    for step in 0..config.steps {
        let batch = schedule.batch(step);
        let elements: usize = batch.iter().map(|&i| train[i].len()).sum();
        let mut grads = Grads::zeros_like(&model.store);
        let mut batch_loss = 0.0;
        for &i in &batch {
            let mut g = Graph::new(&model.store);
            let total = model.reconstruction_graph(&mut g, &train[i]);
            let l = g.scale(total, 1.0 / elements as f64);
            batch_loss += g.scalar(l);
            grads.add_assign(&g.backward(l));
        }
        if !batch_loss.is_finite() || !grads.is_finite() {
            log::error!(
                "SDN pretraining diverged at step {}; best model is from step {}",
                step + 1,
                log.best_step
            );
            return Err(Error::Numeric(format!(
                "SDN reconstruction loss became non-finite at step {} (last good step {})",
                step + 1,
                log.best_step
            )));
        }
        grads.clip_global_norm(config.gradient_clip_norm);
        adam.update(&mut model.store, &grads);
        window_loss += batch_loss;
        window_steps += 1;
        log.steps_run = step + 1;

        if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
            let val_l1 = mean_l1(&model, &val);
            let point = PretrainPoint {
                step: step + 1,
                train_l1: window_loss / window_steps as f64,
                val_l1,
            };
            log::info!("sdn step {} train_l1 {:.5} val_l1 {:.5}", point.step, point.train_l1, val_l1);
            log.points.push(point);
            window_loss = 0.0;
            window_steps = 0;
            if !val_l1.is_finite() {
                return Err(Error::Numeric(format!("SDN validation loss non-finite at step {}", step + 1)));
            }
            if val_l1 < log.best_val_l1 {
                log.best_val_l1 = val_l1;
                log.best_step = step + 1;
                best = model.store.clone();
                stale = 0;
                if let Some(path) = &options.checkpoint_path {
                    model.save(path)?;
                }
            } else {
                stale += 1;
                if stale >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    model.store = best;
    Ok((model, log))
}
