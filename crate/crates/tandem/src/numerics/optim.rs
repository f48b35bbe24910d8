use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Named trainable tensors. Iteration order is the sorted name order,
/// which keeps every consumer deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

struct MomentState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// AdamW with decoupled weight decay and a linear learning-rate warmup
/// over the first epoch's steps.
///
/// Moment state is kept per parameter and only advanced for parameters
/// that received a gradient, so a head untouched by the current task's
/// loss keeps its optimizer state untouched as well.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    state: BTreeMap<String, MomentState>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, warmup_steps: u64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            warmup_steps,
            state: BTreeMap::new(),
        }
    }

    /// Effective learning rate at 1-indexed global step.
    pub fn lr_at(&self, global_step: u64) -> f64 {
        if self.warmup_steps == 0 || global_step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * global_step as f64 / self.warmup_steps as f64
        }
    }

    /// One update over every parameter present in `grads`.
    ///
    /// Aborts before mutating anything if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Tensor>,
        global_step: u64,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter {name}; step aborted"
                )));
            }
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} does not match parameter {name} shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        let lr_t = self.lr_at(global_step);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let st = self.state.entry(name.clone()).or_insert_with(|| MomentState {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t as i32);
            let bc2 = 1.0 - self.beta2.powi(st.t as i32);
            let pd = p.data_mut();
            for ((w, gi), (m, v)) in pd
                .iter_mut()
                .zip(g.data())
                .zip(st.m.iter_mut().zip(st.v.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr_t * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
        Ok(())
    }

    /// Parameters whose moment state has ever been advanced.
    pub fn touched(&self) -> Vec<&String> {
        self.state.keys().collect()
    }
}
