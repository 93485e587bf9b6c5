use std::collections::BTreeMap;

use crate::diffcore::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment optimizer state keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with a per-parameter learning rate. Frozen entries are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: impl Fn(&str) -> f64) -> Result<()> {
        for (name, entry) in store.iter() {
            if !entry.frozen && entry.tensor.grad.is_none() {
                return Err(Error::MissingGrad(name.to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, entry) in store.iter_mut() {
            if entry.frozen {
                continue;
            }
            let rate = lr(name);
            let n = entry.tensor.len();
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); n]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); n]);
            let grad = entry.tensor.grad.take().expect("checked above");
            let values = entry.tensor.values_mut();
            for k in 0..n {
                let g = grad[k].f64();
                let mk = beta1 * m[k].f64() + (1.0 - beta1) * g;
                let vk = beta2 * v[k].f64() + (1.0 - beta2) * g * g;
                m[k] = T::of(mk);
                v[k] = T::of(vk);
                if rate != 0.0 {
                    let update = rate * (mk / bc1) / ((vk / bc2).sqrt() + eps);
                    values[k] = T::of(values[k].f64() - update);
                }
            }
            entry.tensor.grad = Some(grad);
        }
        Ok(())
    }

    pub fn step_uniform(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.step(store, |_| lr)
    }

    /// Moment buffers and step count as named tensors (`adam.m.*`, `adam.v.*`, `adam.t`).
    pub fn export(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (name, m) in &self.first {
            out.push((format!("adam.m.{name}"), Tensor::new(&[m.len()], m.clone()).expect("moment")));
        }
        for (name, v) in &self.second {
            out.push((format!("adam.v.{name}"), Tensor::new(&[v.len()], v.clone()).expect("moment")));
        }
        // split the count so it survives 32-bit storage exactly
        let hi = (self.step >> 16) as f64;
        let lo = (self.step & 0xffff) as f64;
        out.push(("adam.t".into(), Tensor::new(&[2], vec![T::of(hi), T::of(lo)]).expect("step")));
        out
    }

    pub fn import(config: AdamConfig, store: &ParamStore<T>) -> Result<Self> {
        let mut adam = Adam::new(config);
        for (name, entry) in store.iter() {
            if let Some(rest) = name.strip_prefix("adam.m.") {
                adam.first.insert(rest.to_string(), entry.tensor.values().to_vec());
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                adam.second.insert(rest.to_string(), entry.tensor.values().to_vec());
            } else if name == "adam.t" {
                let v = entry.tensor.values();
                if v.len() != 2 {
                    return Err(Error::Checkpoint("adam.t must hold two values".into()));
                }
                adam.step = ((v[0].f64() as u64) << 16) | (v[1].f64() as u64);
            }
        }
        Ok(adam)
    }
}
