//! Adam with decoupled weight decay.

use super::mlp::Field;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    params: AdamParams,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            params,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// `θ ← θ - lr·(m̂/(√v̂ + ε) + wd·θ)` over `chunks`, which must be laid out
    /// the same way on every call.
    pub fn update<'a>(&mut self, params: impl IntoIterator<Item = &'a mut [f64]>, grads: impl IntoIterator<Item = &'a [f64]>, lr: f64) {
        self.t += 1;
        let p = self.params;
        let c1 = 1.0 - p.beta1.powi(self.t as i32);
        let c2 = 1.0 - p.beta2.powi(self.t as i32);
        let mut offset = 0;
        for (theta, g) in params.into_iter().zip(grads) {
            let m = &mut self.m[offset..offset + theta.len()];
            let v = &mut self.v[offset..offset + theta.len()];
            for i in 0..theta.len() {
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
                let step = (m[i] / c1) / ((v[i] / c2).sqrt() + p.eps);
                theta[i] -= lr * (step + p.weight_decay * theta[i]);
            }
            offset += theta.len();
        }
        debug_assert_eq!(offset, self.m.len());
    }

    pub fn update_field(&mut self, field: &mut Field, grads: &Field, lr: f64) {
        let g = grads.tensors();
        self.update(field.tensors_mut(), g.into_iter().map(|(_, _, v)| v), lr);
    }

    pub fn update_scalar(&mut self, value: &mut f64, grad: f64, lr: f64) {
        self.update([std::slice::from_mut(value)], [std::slice::from_ref(&grad)], lr);
    }
}
