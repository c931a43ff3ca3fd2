//! AdamW optimisation, the training loop and hyperparameter search.

mod adamw;
mod search;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lossmetrics::{FocalConfig, Loss, LossKind};

pub use adamw::{adamw_step, adamw_update_tensor, clip_global_norm, AdamWState};
pub use search::{random_search, LeaderboardEntry, RealDim, SearchOutcome, SearchSpace, TrialConfig};
pub use train::{
    batch_gradient, evaluate, evaluate_with_loss, train, write_history_csv, CheckpointRecord, EpochRecord,
    TrainHistory, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub amsgrad: bool,
    pub global_clipnorm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: LossKind,
    pub focal: FocalConfig,
    pub early_stop_patience: usize,
    pub checkpoint_min_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.09e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            weight_decay: 0.004,
            amsgrad: true,
            global_clipnorm: 1.0,
            batch_size: 128,
            max_epochs: 5000,
            loss: LossKind::Cce,
            focal: FocalConfig::default(),
            early_stop_patience: 50,
            checkpoint_min_interval: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.global_clipnorm.is_nan() || self.global_clipnorm <= 0.0 {
            return fail(format!("global_clipnorm {} must be positive", self.global_clipnorm));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be at least 1".into());
        }
        if self.checkpoint_min_interval == 0 {
            return fail("checkpoint_min_interval must be at least 1".into());
        }
        self.focal.validate()
    }

    pub fn loss_fn(&self) -> Loss {
        Loss::new(self.loss, self.focal)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
