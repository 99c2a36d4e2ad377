//! Adam with decoupled-into-gradient L2 weight decay, operating on named
//! parameter snapshots.

use serde::{Deserialize, Serialize};

use crate::adapt::ParameterSnapshot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 term added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-5,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// First/second moment estimates plus the bias-correction step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParameterSnapshot,
    pub v: ParameterSnapshot,
    pub steps: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSnapshot) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            steps: 0,
        }
    }

    /// One update: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(
        &mut self,
        params: &mut ParameterSnapshot,
        grads: &ParameterSnapshot,
        cfg: &AdamConfig,
    ) -> Result<()> {
        cfg.validate()?;
        params.check_compatible(grads)?;
        params.check_compatible(&self.m)?;
        self.steps += 1;
        let t = self.steps as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries().iter())
            .zip(self.m.entries_mut().iter_mut().zip(self.v.entries_mut()))
        {
            let ps = p.as_slice_mut().expect("contiguous params");
            let gs = g.as_slice().expect("contiguous grads");
            let ms = m.as_slice_mut().expect("contiguous moment");
            let vs = v.as_slice_mut().expect("contiguous moment");
            for i in 0..ps.len() {
                let grad = gs[i] + cfg.weight_decay * ps[i];
                ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * grad;
                vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * grad * grad;
                let m_hat = ms[i] / bias1;
                let v_hat = vs[i] / bias2;
                ps[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}
