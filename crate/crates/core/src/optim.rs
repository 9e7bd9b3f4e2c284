//! AdamW with decoupled weight decay, keyed by parameter name.

use std::collections::HashMap;

use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<String, (Mat, Mat)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once per optimizer step, before
    /// the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Mat, grad: &Mat, lr: f64) {
        assert_eq!(param.shape(), grad.shape(), "AdamW: gradient shape mismatch for {name}");
        assert!(self.step > 0, "AdamW::update before begin_step");
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Mat::zeros(param.rows(), param.cols()), Mat::zeros(param.rows(), param.cols())));
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), mm), vv) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mm = self.beta1 * *mm + (1.0 - self.beta1) * g;
            *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
            let m_hat = *mm / bc1;
            let v_hat = *vv / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
        }
    }
}
