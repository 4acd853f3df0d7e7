//! LARS with separate rates for weights and for biases/normalization.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LarsConfig {
    pub trust_coeff: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            trust_coeff: 0.001,
            weight_decay: 1e-6,
            momentum: 0.9,
        }
    }
}

/// Momentum buffers keyed by parameter name.
#[derive(Debug, Default, Clone)]
pub struct Lars {
    pub config: LarsConfig,
    velocity: HashMap<String, Vec<f32>>,
}

impl Lars {
    pub fn new(config: LarsConfig) -> Self {
        Self {
            config,
            velocity: HashMap::new(),
        }
    }

    /// Weights: `u = trust·(g + wd·w)` with
    /// `trust = η‖w‖ / (‖g‖ + wd‖w‖ + 1e-9)` (1 when either norm is zero).
    /// Bias/norm tensors: `u = g`. Then `v ← μv + u`, `w ← w − lr·v`.
    /// Frozen tensors and names without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr_w: f64, lr_b: f64) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let LarsConfig {
            trust_coeff,
            weight_decay,
            momentum,
        } = self.config;
        for (name, g) in grads {
            let entry = params
                .get_mut(name)
                .ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
            if entry.frozen {
                continue;
            }
            if entry.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!("gradient of {name}")));
            }
            let w = entry.value.data_mut();
            let g = g.data();
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; w.len()]);
            let (scale, wd, lr) = if entry.is_bias_or_norm {
                (1.0, 0.0, lr_b)
            } else {
                let wn = w.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                let gn = g.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                let trust = if wn > 0.0 && gn > 0.0 {
                    trust_coeff * wn / (gn + weight_decay * wn + 1e-9)
                } else {
                    1.0
                };
                (trust, weight_decay, lr_w)
            };
            for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                let u = scale * (gi as f64 + wd * *wi as f64);
                let nv = momentum * *vi as f64 + u;
                *vi = nv as f32;
                *wi = (*wi as f64 - lr * nv) as f32;
            }
        }
        Ok(())
    }
}
