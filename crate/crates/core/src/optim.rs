//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var};

/// Parameters in insertion order, addressable by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        match self.index.get(name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.to_string(), self.names.len());
                self.names.push(name.to_string());
                self.tensors.push(t);
            }
        }
    }

    /// `rows x cols` tensor drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(rows, cols, data));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Records every parameter on the tape as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not in the store"),
        }
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// Gradients in store order, zeros for parameters off the loss path.
    pub fn gradients(&self, g: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| g.get_or_zero(v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Add `weight_decay * p` to the gradient instead of shrinking `p` directly.
    pub coupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            coupled_weight_decay: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

pub fn adam_step(cfg: &AdamConfig, state: &mut AdamState, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), TensorError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            lhs: (params.len(), 1),
            rhs: (grads.len(), 1),
        });
    }
    for (p, g) in params.tensors.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.tensors.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.data.len() {
            let mut gi = grads[k].data[i];
            if cfg.coupled_weight_decay {
                gi += cfg.weight_decay * p.data[i];
            } else {
                p.data[i] -= cfg.lr * cfg.weight_decay * p.data[i];
            }
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x));
        s
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = scalar_store(0.5);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&cfg, &mut st, &mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 0.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&cfg, &mut st, &mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert_relative_eq!(p.get("x").unwrap().item(), 1.0 - 1e-3 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn decay_only_scales() {
        let mut p = scalar_store(2.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        for _ in 0..3 {
            adam_step(&cfg, &mut st, &mut p, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_relative_eq!(p.get("x").unwrap().item(), 2.0 * 0.95f64.powi(3), epsilon = 1e-15);
    }

    #[test]
    fn shape_checks() {
        let mut p = scalar_store(2.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&AdamConfig::default(), &mut st, &mut p, &[Tensor::zeros(1, 2)]);
        assert!(matches!(err, Err(TensorError::ShapeMismatch { .. })));
    }
}
