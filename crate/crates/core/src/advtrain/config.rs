use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::discriminator::{DiscKind, KernelPreset};
use crate::metrics::MetricId;
use crate::numcore::AdamConfig;
use crate::textdata::DEFAULT_T_MAX;

/// Every knob of a training run. Image feature width and vocabulary size
/// come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the discriminator probability in the combined reward.
    pub lambda: f64,
    pub g_steps: usize,
    pub d_steps: usize,
    pub metric_q: MetricId,
    pub disc_kind: DiscKind,
    pub kernel_preset: KernelPreset,
    /// Generator LSTM width `H`.
    pub hidden: usize,
    /// RNN discriminator width `H_D`.
    pub disc_hidden: usize,
    pub t_max: usize,
    pub min_count: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub mle_epochs: usize,
    pub disc_epochs: usize,
    /// Adversarial iteration budget; one iteration is `g_steps` generator
    /// updates followed by `d_steps` discriminator updates.
    pub iterations: usize,
    pub eval_every: usize,
    /// Held-out evaluations without improvement before stopping early;
    /// 0 disables early stopping.
    pub patience: usize,
    pub eval_beam: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            g_steps: 1,
            d_steps: 1,
            metric_q: MetricId::CiderD,
            disc_kind: DiscKind::Cnn,
            kernel_preset: KernelPreset::Desk,
            hidden: 128,
            disc_hidden: 128,
            t_max: DEFAULT_T_MAX,
            min_count: 5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch: 16,
            mle_epochs: 25,
            disc_epochs: 10,
            iterations: 1000,
            eval_every: 100,
            patience: 5,
            eval_beam: 5,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// Field names of [`TrainConfig`], in declaration order.
pub const TRAIN_CONFIG_KEYS: [&str; 23] = [
    "lambda",
    "g_steps",
    "d_steps",
    "metric_q",
    "disc_kind",
    "kernel_preset",
    "hidden",
    "disc_hidden",
    "t_max",
    "min_count",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch",
    "mle_epochs",
    "disc_epochs",
    "iterations",
    "eval_every",
    "patience",
    "eval_beam",
    "init_scale",
    "seed",
];

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::config("lambda", format!("{} is outside [0, 1]", self.lambda)));
        }
        let positive = [
            ("g_steps", self.g_steps),
            ("d_steps", self.d_steps),
            ("hidden", self.hidden),
            ("disc_hidden", self.disc_hidden),
            ("t_max", self.t_max),
            ("min_count", self.min_count),
            ("eval_every", self.eval_every),
            ("eval_beam", self.eval_beam),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(TrainError::config(key, "must be at least 1"));
            }
        }
        if self.batch < 2 {
            return Err(TrainError::config("batch", "must be at least 2 to form wrong pairs"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::config("lr", "must be a positive finite number"));
        }
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(TrainError::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(TrainError::config("adam_eps", "must be a positive finite number"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(TrainError::config("init_scale", "must be a finite non-negative number"));
        }
        Ok(())
    }
}
