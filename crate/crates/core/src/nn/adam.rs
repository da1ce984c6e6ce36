use super::{Grads, ParamStore};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = store.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads, lr: f32) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = lr / bc1;
        for (((param, g), m), v) in store
            .params_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..param.data.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let denom = (v[i] / bc2).sqrt() + self.eps;
                param.data[i] -= step_size * m[i] / denom;
            }
        }
    }
}
