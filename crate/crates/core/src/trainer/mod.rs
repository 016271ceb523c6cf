//! Decoder training: poly-decayed SGD with momentum, checkpoints, and a gradient audit.

mod checkpoint;
mod gradcheck;
mod run;
mod schedule;
mod sgd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::LossConfig;
use crate::volume::{AugmentConfig, NormalizationScheme};

pub use checkpoint::{
    config_digest, load_checkpoint, save_checkpoint, CheckpointManifest, ConfigDigests, TensorEntry, TrainingState,
};
pub use gradcheck::{
    audit_gradients, finite_difference_gradient_check, finite_difference_gradient_check_with, FdProbe,
    GradCheckOptions, GradCheckReport,
};
pub use run::{derive_seed, read_training_log, run_training, IterRecord, TrainOptions, TrainingOutcome};
pub use schedule::{poly_learning_rate, poly_lr};
pub use sgd::{sgd_step, sgd_update, SgdParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub init_lr: f64,
    pub power: f64,
    pub max_epoch: usize,
    pub iters_per_epoch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    /// `(D, H, W)`; the manifest's patch size when absent.
    pub patch_size: Option<[usize; 3]>,
    pub seed: u64,
    /// Write a checkpoint after every this many epochs; the final one is always written.
    pub checkpoint_every: usize,
    pub normalization: NormalizationScheme,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_lr: 1e-2,
            power: 0.9,
            max_epoch: 1000,
            iters_per_epoch: 250,
            momentum: 0.99,
            weight_decay: 3e-5,
            nesterov: false,
            batch_size: 2,
            patch_size: None,
            seed: 0,
            checkpoint_every: 50,
            normalization: NormalizationScheme::Zscore,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("init_lr", self.init_lr), ("power", self.power)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("train.{name}"), format!("must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation("train.weight_decay", "must be >= 0"));
        }
        let counts = [
            ("max_epoch", self.max_epoch),
            ("iters_per_epoch", self.iters_per_epoch),
            ("batch_size", self.batch_size),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::validation(format!("train.{name}"), "must be >= 1"));
            }
        }
        if let Some(p) = self.patch_size {
            if p.contains(&0) || p[1] % 16 != 0 || p[2] % 16 != 0 {
                return Err(Error::validation("train.patch_size", "needs positive extents with H, W multiples of 16"));
            }
        }
        self.loss.validate()
    }

    pub fn sgd(&self, lr: f64) -> SgdParams {
        SgdParams {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            nesterov: self.nesterov,
        }
    }
}
