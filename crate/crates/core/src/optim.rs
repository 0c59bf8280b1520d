//! First-order parameter updates over [`Params`] containers.

use serde::{Deserialize, Serialize};

use crate::lmkb_core::nn::{Matrix, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Stateful optimizer; moment buffers are created on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        if self.lr == 0.0 {
            return;
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    p.zip_apply(g, |x, gx| *x -= self.lr * gx);
                }
            }
            OptimizerKind::Adam => {
                let gs = grads.tensors();
                if self.m.is_empty() {
                    self.m = gs.iter().map(|g| Matrix::zeros(g.nrows(), g.ncols())).collect();
                    self.v = self.m.clone();
                }
                self.step += 1;
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(gs)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
