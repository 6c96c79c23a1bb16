use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;

/// Optimizer parameter group; each group has its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Recurrent,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub group: Group,
    pub trainable: bool,
    /// Subject to weight decay (matrices yes, biases and norms no).
    pub decay: bool,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: Group, decay: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.clone(),
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            value,
            group,
            trainable: true,
            decay,
        });
        self.index.insert(name, id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, on: bool) {
        self.params[id.0].trainable = on;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Global L2 norm of the gradients of trainable parameters in `group`
    /// (all groups when `None`).
    pub fn grad_norm(&self, group: Option<Group>) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable && group.is_none_or(|g| g == p.group))
            .map(|p| p.grad.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales gradients so their global norm is at most `max_norm`; returns
    /// the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm(None);
        if norm > max_norm && norm > 0.0 {
            let s = (max_norm / norm) as f32;
            for p in self.params.iter_mut().filter(|p| p.trainable) {
                p.grad.data.iter_mut().for_each(|x| *x *= s);
            }
        }
        norm
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: i32,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, step: 0 }
    }
}

impl AdamW {
    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update; `lr(group)` gives the effective rate for each group.
    pub fn step(&mut self, store: &mut ParamStore, lr: impl Fn(Group) -> f32) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for p in store.params.iter_mut().filter(|p| p.trainable) {
            let lr = lr(p.group);
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            for i in 0..p.value.data.len() {
                let g = p.grad.data[i];
                let m = self.beta1 * p.m.data[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.v.data[i] + (1.0 - self.beta2) * g * g;
                p.m.data[i] = m;
                p.v.data[i] = v;
                let w = &mut p.value.data[i];
                *w -= lr * wd * *w;
                *w -= lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup to 1 over `warmup` steps, then linear decay to 0 at `total`.
#[derive(Debug, Clone, Copy)]
pub struct LinearWarmup {
    pub warmup: usize,
    pub total: usize,
}

impl LinearWarmup {
    pub fn new(total: usize, warmup_frac: f64) -> Self {
        let warmup = ((total as f64) * warmup_frac).round() as usize;
        LinearWarmup { warmup, total: total.max(1) }
    }

    /// Multiplier for 0-based `step`.
    pub fn factor(&self, step: usize) -> f32 {
        if step < self.warmup {
            (step + 1) as f32 / self.warmup as f32
        } else {
            let rest = (self.total - self.warmup).max(1) as f32;
            (1.0 - (step - self.warmup) as f32 / rest).max(0.0)
        }
    }
}

/// Halves the rate after `patience` epochs without validation improvement.
#[derive(Debug, Clone)]
pub struct Plateau {
    pub factor: f32,
    pub patience: usize,
    best: f64,
    bad: usize,
    scale: f32,
}

impl Plateau {
    pub fn new(factor: f32, patience: usize) -> Self {
        Plateau { factor, patience, best: f64::INFINITY, bad: 0, scale: 1.0 }
    }

    pub fn observe(&mut self, val_loss: f64) {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad = 0;
        } else {
            self.bad += 1;
            if self.bad > self.patience {
                self.scale *= self.factor;
                self.bad = 0;
            }
        }
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }
}
