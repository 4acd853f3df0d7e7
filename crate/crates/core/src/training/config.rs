use serde::{Deserialize, Serialize};

use super::schedule::BetaSchedule;
use crate::error::{Error, Result};

/// Which objective drives the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// β ≡ 1: redundancy reduction only.
    Bt,
    /// β ≡ 0: triplet InfoNCE only.
    #[serde(alias = "info_nce")]
    Infonce,
    /// β from the configured schedule.
    Combined,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bt" => Ok(LossMode::Bt),
            "infonce" | "info_nce" => Ok(LossMode::Infonce),
            "combined" => Ok(LossMode::Combined),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub temperature: f64,
    pub beta_schedule: BetaSchedule,
    /// δ for the step schedule.
    pub delta: usize,
    /// Δt for the iterative step schedule.
    pub delta_t: usize,
    pub loss: LossMode,
    pub warmup_epochs: usize,
    pub decay_factor: f64,
    /// Defaults to 0.2·b/256.
    pub base_lr_weights: Option<f64>,
    /// Defaults to 0.0048·b/256.
    pub base_lr_biases: Option<f64>,
    pub trust_coeff: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub early_stop_patience: usize,
    pub samples_per_subject: usize,
    /// Defaults to floor(train scans / b), at least 1.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 180,
            lambda: 0.0051,
            temperature: 0.07,
            beta_schedule: BetaSchedule::Linear,
            delta: 30,
            delta_t: 30,
            loss: LossMode::Combined,
            warmup_epochs: 10,
            decay_factor: 1000.0,
            base_lr_weights: None,
            base_lr_biases: None,
            trust_coeff: 0.001,
            weight_decay: 1e-6,
            momentum: 0.9,
            early_stop_patience: 20,
            samples_per_subject: 2,
            steps_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_weights(&self) -> f64 {
        self.base_lr_weights
            .unwrap_or(0.2 * self.batch_size as f64 / 256.0)
    }

    pub fn lr_biases(&self) -> f64 {
        self.base_lr_biases
            .unwrap_or(0.0048 * self.batch_size as f64 / 256.0)
    }

    pub fn steps_for(&self, train_scans: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or(train_scans / self.batch_size)
            .max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.samples_per_subject;
        if m < 2 {
            return Err(Error::invalid("samples_per_subject must be at least 2"));
        }
        if self.batch_size < 4 || !self.batch_size.is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "batch_size {} must be at least 4 and divisible by {m}",
                self.batch_size
            )));
        }
        if self.batch_size / m < 2 {
            return Err(Error::invalid("a batch must hold at least two subjects"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if self.epochs <= self.warmup_epochs {
            return Err(Error::invalid("epochs must exceed warmup_epochs"));
        }
        if self.warmup_epochs == 0 {
            return Err(Error::invalid("warmup_epochs must be positive"));
        }
        if !(self.decay_factor >= 1.0) {
            return Err(Error::invalid("decay_factor must be at least 1"));
        }
        if self.beta_schedule == BetaSchedule::IterativeStep && self.delta_t == 0 {
            return Err(Error::invalid("delta_t must be positive"));
        }
        for (name, v) in [
            ("base_lr_weights", self.lr_weights()),
            ("base_lr_biases", self.lr_biases()),
            ("trust_coeff", self.trust_coeff),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("steps_per_epoch must be positive"));
        }
        Ok(())
    }

    /// β actually applied at epoch `t`, after the loss-mode override.
    pub fn effective_beta(&self, t: usize) -> Result<f64> {
        match self.loss {
            LossMode::Bt => Ok(1.0),
            LossMode::Infonce => Ok(0.0),
            LossMode::Combined => super::schedule::beta(
                t,
                self.beta_schedule,
                self.delta,
                self.delta_t,
                self.epochs,
            ),
        }
    }
}
