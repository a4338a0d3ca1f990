//! Optimization: decoupled-weight-decay Adam over the network parameters,
//! plus the storage-precision rounding used by the optional reduced mode.

use alloc::vec;
use alloc::vec::Vec;

use crate::net::{Gradients, GuidanceNet};
use crate::{CoreError, Result};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(net: &GuidanceNet, lr: f32) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(CoreError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            m: net.params().iter().map(|p| vec![0.0; p.len()]).collect(),
            v: net.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over all parameter tensors.
    pub fn step(&mut self, net: &mut GuidanceNet, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - libm::powf(self.beta1, self.step as f32);
        let bc2 = 1.0 - libm::powf(self.beta2, self.step as f32);
        for ((param, g), (m, v)) in net
            .params_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -=
                    self.lr * (m_hat / (libm::sqrtf(v_hat) + self.eps) + self.weight_decay * param[i]);
            }
        }
    }
}

/// Round to bfloat16 storage precision (round-to-nearest-even).
#[inline]
pub fn round_bf16(x: f32) -> f32 {
    let bits = x.to_bits();
    let round = 0x7fff + ((bits >> 16) & 1);
    f32::from_bits((bits.wrapping_add(round)) & 0xffff_0000)
}

/// Quantize all parameters to bfloat16 storage precision in place.
pub fn quantize_params_bf16(net: &mut GuidanceNet) {
    for tensor in net.params_mut() {
        for v in tensor.iter_mut() {
            *v = round_bf16(*v);
        }
    }
}
