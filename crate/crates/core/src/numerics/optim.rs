//! Adam optimizer over a [`ParamSet`].

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::numerics::params::ParamSet;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter gradient buffers keyed by parameter name.
pub type GradMap = HashMap<String, Vec<f64>>;

/// Adam state: first/second moment estimates per parameter plus a shared step
/// counter for bias correction.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.learning_rate > 0.0) {
            return Err(CoreError::config(format!(
                "learning_rate must be positive, got {}",
                cfg.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(CoreError::config("adam betas must lie in [0, 1)".to_string()));
        }
        if !(cfg.epsilon > 0.0) {
            return Err(CoreError::config("adam epsilon must be positive".to_string()));
        }
        Ok(Adam { cfg, step_count: 0, moments: HashMap::new() })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. Parameters absent from `grads` are left untouched
    /// (their moments do not advance either). Non-finite gradients abort the
    /// step before any parameter is modified.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::numeric(format!("non-finite gradient for parameter {name}")));
            }
            let p = params
                .get(name)
                .ok_or_else(|| CoreError::Unknown { kind: "parameter", id: name.clone() })?;
            if p.tensor.len() != g.len() {
                return Err(CoreError::domain(format!(
                    "gradient length {} does not match parameter {} of length {}",
                    g.len(),
                    name,
                    p.tensor.len()
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        for param in params.iter_mut() {
            let Some(g) = grads.get(&param.name) else { continue };
            let n = param.tensor.len();
            let (m, v) = self
                .moments
                .entry(param.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for i in 0..n {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.tensor.values[i] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}
