//! Optimisation loops, scenario orchestration, fine-tuning, checkpoints and
//! the finite-difference gradient harness.

mod data;
mod gradcheck;
mod scenario;
mod trainer;

use serde::{Deserialize, Serialize};

pub use crate::inversion::{AblationVariant, VariantFlags};
pub use data::{prepare_utterances, Dataset, ModelUtterance, Normalizers, ProcessedUtterance};
pub use gradcheck::{
    grad_check, gradcheck_suite, relative_error, GradCase, GradCheckReport, LeafCheck, IN_TOLERANCE, REL_ERROR_FLOOR, STEP,
    TOLERANCE,
};
pub use scenario::{check_held_out, obtain_sdn, run_scenario, sdn_pretraining_set, ScenarioConfig, ScenarioOutcome};
pub use trainer::{
    evaluate, fine_tune, mean_loss, predict_mm, resume_hash, train_safn, MetricsLine, SafnCheckpoint, TrainState,
    TrainSummary, CHECKPOINT_KIND,
};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Weight of the lip term.
    pub alpha: f64,
    /// Weight of the tongue term.
    pub beta: f64,
    pub gradient_clip_norm: f64,
    pub eval_every: u64,
    /// Evaluations without improvement before stopping; `None` trains for the
    /// full budget.
    pub patience: Option<usize>,
    pub max_eval_utterances: Option<usize>,
    pub fine_tune_iteration_factor: f64,
    pub fine_tune_lr_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 5,
            iterations: 28_800,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            alpha: 0.5,
            beta: 0.5,
            gradient_clip_norm: 5.0,
            eval_every: 500,
            patience: None,
            max_eval_utterances: None,
            fine_tune_iteration_factor: 0.2,
            fine_tune_lr_factor: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.eval_every == 0 {
            return bad("learning_rate, batch_size and eval_every must be positive");
        }
        if self.alpha < 0.0 || self.beta < 0.0 || !(self.alpha + self.beta > 0.0) {
            return bad("alpha and beta must be non-negative with a positive sum");
        }
        if !(self.gradient_clip_norm > 0.0) {
            return bad("gradient_clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if self.fine_tune_iteration_factor < 0.0 || !(self.fine_tune_lr_factor > 0.0) {
            return bad("fine-tune factors must be non-negative (lr factor positive)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Reduced schedule for speaker adaptation.
    pub fn fine_tune_schedule(&self) -> TrainConfig {
        TrainConfig {
            iterations: (self.iterations as f64 * self.fine_tune_iteration_factor).round() as u64,
            learning_rate: self.learning_rate * self.fine_tune_lr_factor,
            patience: None,
            ..self.clone()
        }
    }
}
