use alloc::vec::Vec;

use super::{ModelParams, PARAM_NAMES};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> AdamW {
        let zeros: Vec<Vec<f64>> =
            PARAM_NAMES.iter().map(|n| alloc::vec![0.0; params.tensor(n).map_or(0, Vec::len)]).collect();
        AdamW { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Keeps the PAD embedding row at zero.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (k, (name, tensor)) in params.tensors_mut().into_iter().enumerate() {
            let g = grads.tensor(name).expect("matching tensors");
            let decay = if ModelParams::decays(name) { self.weight_decay } else { 0.0 };
            self.update(k, tensor, g, decay, bc1, bc2);
        }
        params.pin_pad();
    }

    /// Updates a raw tensor with its own moment slot; used for auxiliary heads.
    pub(crate) fn step_extra(&mut self, tensors: &mut [(&mut [f64], &[f64], bool)]) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (k, (tensor, g, decays)) in tensors.iter_mut().enumerate() {
            if self.m.len() <= k {
                self.m.push(alloc::vec![0.0; tensor.len()]);
                self.v.push(alloc::vec![0.0; tensor.len()]);
            }
            let decay = if *decays { self.weight_decay } else { 0.0 };
            self.update(k, tensor, g, decay, bc1, bc2);
        }
    }

    fn update(&mut self, k: usize, tensor: &mut [f64], g: &[f64], decay: f64, bc1: f64, bc2: f64) {
        let (m, v) = (&mut self.m[k], &mut self.v[k]);
        for i in 0..tensor.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            tensor[i] -= self.lr * (mhat / (libm::sqrt(vhat) + self.eps) + decay * tensor[i]);
        }
    }

    pub(crate) fn empty(lr: f64, weight_decay: f64) -> AdamW {
        AdamW { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }
}
