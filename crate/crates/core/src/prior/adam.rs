use serde::{Deserialize, Serialize};

use super::PriorWeights;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments mirror the weight layout.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: PriorWeights<T>,
    v: PriorWeights<T>,
    steps: u64,
    /// Group-name prefixes excluded from updates.
    frozen: Vec<String>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, like: &PriorWeights<T>) -> Self {
        Self {
            config,
            m: like.zeros_like(),
            v: like.zeros_like(),
            steps: 0,
            frozen: Vec::new(),
        }
    }

    pub fn with_frozen(mut self, prefixes: Vec<String>) -> Self {
        self.frozen = prefixes;
        self
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, weights: &mut PriorWeights<T>, grads: &PriorWeights<T>) -> Result<()> {
        weights.ensure_same_layout(grads)?;
        if !grads.all_finite() {
            return Err(Error::NonFinite {
                step: self.steps as usize,
                detail: "gradient".into(),
            });
        }
        self.steps += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let t = self.steps as i32;
        let lr_t = T::lit(c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let eps = T::lit(c.eps);
        let one = T::one();
        for (((w, g), m), v) in weights
            .groups
            .iter_mut()
            .zip(&grads.groups)
            .zip(&mut self.m.groups)
            .zip(&mut self.v.groups)
        {
            if self.frozen.iter().any(|p| w.name.starts_with(p.as_str())) {
                continue;
            }
            for (((w, &g), m), v) in w.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= lr_t * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}
