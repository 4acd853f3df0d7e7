//! Task weight β(t) and the per-epoch learning rates.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// β ≡ 0.5.
    Constant,
    /// 1 before epoch δ, 0 after.
    Step,
    /// Alternates 1/0 every Δt epochs, starting at 1.
    #[serde(alias = "iter")]
    IterativeStep,
    /// 1 − t/H.
    Linear,
}

impl BetaSchedule {
    pub const ALL: [BetaSchedule; 4] = [
        BetaSchedule::Constant,
        BetaSchedule::Step,
        BetaSchedule::IterativeStep,
        BetaSchedule::Linear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BetaSchedule::Constant => "constant",
            BetaSchedule::Step => "step",
            BetaSchedule::IterativeStep => "iterative_step",
            BetaSchedule::Linear => "linear",
        }
    }
}

impl fmt::Display for BetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BetaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(BetaSchedule::Constant),
            "step" => Ok(BetaSchedule::Step),
            "iter" | "iterative_step" => Ok(BetaSchedule::IterativeStep),
            "linear" => Ok(BetaSchedule::Linear),
            other => Err(Error::invalid(format!("unknown beta schedule {other:?}"))),
        }
    }
}

pub fn beta(t: usize, schedule: BetaSchedule, delta: usize, delta_t: usize, epochs: usize) -> Result<f64> {
    if t >= epochs {
        return Err(Error::invalid(format!("epoch {t} outside 0..{epochs}")));
    }
    Ok(match schedule {
        BetaSchedule::Constant => 0.5,
        BetaSchedule::Step => f64::from(u8::from(t < delta)),
        BetaSchedule::IterativeStep => {
            if delta_t == 0 {
                return Err(Error::invalid("iterative step period must be positive"));
            }
            f64::from(u8::from((t / delta_t).is_multiple_of(2)))
        }
        BetaSchedule::Linear => 1.0 - t as f64 / epochs as f64,
    })
}

/// Linear warm-up, then cosine decay that lands exactly on base/decay at
/// the last epoch. Returns `(lr_weights, lr_biases)`.
pub fn lr_schedule(t: usize, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let (h, w) = (cfg.epochs, cfg.warmup_epochs);
    if t >= h {
        return Err(Error::invalid(format!("epoch {t} outside 0..{h}")));
    }
    let factor = if t < w {
        (t + 1) as f64 / w as f64
    } else {
        let span = h - 1 - w;
        let progress = if span == 0 { 1.0 } else { (t - w) as f64 / span as f64 };
        let floor = 1.0 / cfg.decay_factor;
        (1.0 - floor) * (1.0 + (PI * progress).cos()) / 2.0 + floor
    };
    Ok((cfg.lr_weights() * factor, cfg.lr_biases() * factor))
}
