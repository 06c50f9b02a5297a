//! Parameter update rules.

use serde::{Deserialize, Serialize};

use super::config::OptimizerKind;
use crate::numcore::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state; Adam keeps one first and second moment per parameter
/// element, in store order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub t: u64,
    #[serde(skip)]
    pub m: Vec<Vec<f64>>,
    #[serde(skip)]
    pub v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Self {
        let zeros = |on: bool| -> Vec<Vec<f64>> {
            if on {
                store.iter().map(|p| vec![0.0; p.tensor.len()]).collect()
            } else {
                Vec::new()
            }
        };
        let adam = kind == OptimizerKind::Adam;
        Optimizer {
            kind,
            lr,
            t: 0,
            m: zeros(adam),
            v: zeros(adam),
        }
    }

    /// Applies one update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in store.iter_mut() {
                    let g = p.tensor.grad().to_vec();
                    for (w, g) in p.tensor.values_mut().iter_mut().zip(g) {
                        *w -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.t as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    let g = p.tensor.grad().to_vec();
                    for (k, w) in p.tensor.values_mut().iter_mut().enumerate() {
                        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                        let mh = m[k] / c1;
                        let vh = v[k] / c2;
                        *w -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }

    /// Flattened moments for persistence: every `m` then every `v`.
    pub fn moments(&self) -> impl Iterator<Item = f64> + '_ {
        self.m.iter().chain(&self.v).flatten().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn store(w: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![1], vec![w]).unwrap());
        s.get_mut(id).grad_mut()[0] = g;
        s
    }

    #[test]
    fn sgd_step() {
        let mut s = store(1.0, 2.0);
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.1, &s);
        o.step(&mut s);
        assert!((s.iter().next().unwrap().tensor.values()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first update lr·g/(|g|+eps)
        let mut s = store(1.0, 3.0);
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.01, &s);
        o.step(&mut s);
        let w = s.iter().next().unwrap().tensor.values()[0];
        assert!((w - (1.0 - 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(o.t, 1);
    }
}
