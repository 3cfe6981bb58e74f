use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Normalize by the running maximum of the second moment.
    pub amsgrad: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, amsgrad: true }
    }
}

/// Adam optimizer state, one moment buffer per parameter tensor.
///
/// The update matches the PyTorch formulation:
/// `p -= lr / (1 - b1^t) * m / (sqrt(v_hat) / sqrt(1 - b2^t) + eps)`,
/// where `v_hat` is the running max of `v` when `amsgrad` is set.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    max_second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros.clone(),
            max_second: if config.amsgrad { zeros } else { Vec::new() },
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn max_second_moments(&self) -> &[Tensor<T>] {
        &self.max_second
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::contract(format!(
                "adam: {} moment buffers, {} params, {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[k].shape() || g.shape() != self.first[k].shape() {
                return Err(Error::contract(format!("adam: shape mismatch at parameter {k}")));
            }
        }
        self.step += 1;
        let c = |v: f64| T::from_f64_lossy(v);
        let AdamConfig { lr, beta1, beta2, eps, amsgrad } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2_sqrt = (1.0 - beta2.powi(t)).sqrt();
        let step_size = c(lr / bias1);
        let (b1, b2, eps, bias2_sqrt) = (c(beta1), c(beta2), c(eps), c(bias2_sqrt));
        let one = T::one();
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (idx, &gv) in g.data().iter().enumerate() {
                m[idx] = b1 * m[idx] + (one - b1) * gv;
                v[idx] = b2 * v[idx] + (one - b2) * gv * gv;
                let second = if amsgrad {
                    let vmax = &mut self.max_second[k].data_mut()[idx];
                    *vmax = vmax.max(v[idx]);
                    *vmax
                } else {
                    v[idx]
                };
                let denom = second.sqrt() / bias2_sqrt + eps;
                p.data_mut()[idx] -= step_size * m[idx] / denom;
            }
        }
        Ok(())
    }
}
