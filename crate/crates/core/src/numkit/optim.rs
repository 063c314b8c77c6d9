use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: None,
        }
    }
}

/// Moment accumulators for AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `params` using its
    /// gradient slot. Fails before touching anything if a gradient is
    /// missing or shaped wrong.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for (name, t) in params.iter() {
            match &t.grad {
                None => return Err(Error::contract(format!("parameter {name} has no gradient"))),
                Some(g) if g.len() != t.numel() => {
                    return Err(Error::shape(format!(
                        "gradient of {name} has {} entries, parameter has {}",
                        g.len(),
                        t.numel()
                    )))
                }
                _ => {}
            }
        }
        let clip_scale = match self.config.grad_clip {
            Some(max) if max > 0.0 => {
                let norm = params.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            _ => 1.0,
        };
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let n = p.numel();
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            if m.len() != n {
                return Err(Error::shape(format!("moment shape changed for {name}")));
            }
            let g = p.grad.clone().expect("checked above");
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i] * clip_scale;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= c.lr * c.weight_decay * *w + c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
