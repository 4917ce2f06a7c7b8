use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, Matrix, ParamStore};

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled to this global norm when larger; `None`
    /// disables clipping.
    pub max_grad_norm: Option<f64>,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, max_grad_norm: Option<f64>) -> Self {
        let zeros = || {
            params
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows, p.value.cols))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn matches(&self, params: &ParamStore) -> bool {
        self.m.len() == params.len()
            && self
                .m
                .iter()
                .zip(&params.params)
                .all(|(m, p)| (m.rows, m.cols) == (p.value.rows, p.value.cols))
    }

    /// Applies one update; returns the pre-clip gradient norm.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &Gradients) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.params.iter_mut().enumerate() {
            let Some(g) = grads.grads.get(i).and_then(Option::as_ref) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.data.len() {
                let gk = g.data[k] * clip;
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                p.value.data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        norm
    }
}
