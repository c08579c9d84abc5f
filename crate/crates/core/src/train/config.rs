use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};
use crate::optim::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Pixel loss only; no critic is built.
    FcnOnly,
    #[default]
    Scan,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::FcnOnly => "fcn_only",
            TrainMode::Scan => "scan",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcn_only" => Ok(TrainMode::FcnOnly),
            "scan" => Ok(TrainMode::Scan),
            other => Err(ScanError::Config(format!("unknown mode `{other}` (expected fcn_only or scan)"))),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the adversarial term in the segmentor objective.
    pub lambda: f64,
    pub lr: f64,
    /// Total epochs, pretraining included.
    pub epochs: usize,
    pub batch_size: usize,
    /// Segmentor steps per minibatch before the critic step.
    pub s_steps_per_d_step: usize,
    /// Leading epochs trained on the pixel loss alone, one step per minibatch.
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Checkpoint period in epochs; the final epoch is always saved.
    pub checkpoint_every: usize,
    /// Global gradient-norm bound; off when absent.
    pub clip_norm: Option<f64>,
    /// Feed the image to the critic next to the mask.
    pub critic_sees_image: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            lr: 0.0002,
            epochs: 350,
            batch_size: 10,
            s_steps_per_d_step: 5,
            pretrain_epochs: 50,
            seed: 0,
            mode: TrainMode::Scan,
            checkpoint_every: 25,
            clip_norm: None,
            critic_sees_image: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScanError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.s_steps_per_d_step == 0 {
            return bad("s_steps_per_d_step must be >= 1".into());
        }
        if self.pretrain_epochs > self.epochs {
            return bad(format!("pretrain_epochs {} exceeds epochs {}", self.pretrain_epochs, self.epochs));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid adam settings {a:?}"));
        }
        Ok(())
    }

    /// Adversarial weight actually in effect.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            TrainMode::FcnOnly => 0.0,
            TrainMode::Scan => self.lambda,
        }
    }

    pub fn critic_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}
