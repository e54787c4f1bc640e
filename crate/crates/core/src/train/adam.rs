use mbp_tensor::{Grads, ParamId, Tensor};

use crate::model::ParameterStore;

/// Adam with bias correction; moments kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    /// Updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParameterStore<f32>) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)`; untouched parameters count as zero gradient.
    pub fn update(&mut self, params: &mut ParameterStore<f32>, grads: &Grads<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = (1.0 - self.beta1.powf(self.t as f64)) as f32;
        let c2 = (1.0 - self.beta2.powf(self.t as f64)) as f32;
        let (lr, eps) = (lr as f32, self.eps as f32);
        for i in 0..params.len() {
            let g = grads.grads[i].as_ref();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.by_id_mut(ParamId(i)).data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
