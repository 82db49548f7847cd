//! Adam optimizer with bias correction.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, GeneratorParams};
use crate::error::{PszError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(params: &GeneratorParams, config: AdamConfig) -> Self {
        let zeros: Vec<_> = params
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut GeneratorParams, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() || self.first.len() != params.layers.len() {
            return Err(PszError::ShapeMismatch("gradient layer count".into()));
        }
        for (l, g) in params.layers.iter().zip(&grads.layers) {
            if l.weights.dim() != g.weights.dim() || l.bias.len() != g.bias.len() {
                return Err(PszError::ShapeMismatch("gradient layer shape".into()));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), (mw, mb)), (vw, vb)) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(&mut layer.weights)
                .and(mw)
                .and(vw)
                .and(&g.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(mb)
                .and(vb)
                .and(&g.bias)
                .for_each(update);
        }
        Ok(())
    }
}
