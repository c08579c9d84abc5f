//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers for one set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of applied steps.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, config: AdamConfig) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).unzip();
        Self { config, m, v, t: 0 }
    }

    /// Applies one Adam update using the gradient buffers of `params`.
    ///
    /// All gradients are checked before anything is written, so a non-finite
    /// gradient leaves parameters and state untouched. `clip_norm` rescales
    /// the global gradient norm when it exceeds the bound.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        names: &[String],
        lr: f64,
        clip_norm: Option<f64>,
    ) -> Result<()> {
        if params.len() != self.m.len() || names.len() != params.len() {
            return Err(ScanError::shape(format!(
                "adam state tracks {} tensors, got {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        let mut sq_norm = 0f64;
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.m[i].shape() {
                return Err(ScanError::shape(format!(
                    "parameter `{}` {:?} vs moment {:?}",
                    names[i],
                    p.shape(),
                    self.m[i].shape()
                )));
            }
            if let Some(g) = &p.grad {
                for &gv in g {
                    if !gv.is_finite() {
                        return Err(ScanError::NonFiniteGradient { param: names[i].clone(), step: self.t + 1 });
                    }
                    sq_norm += gv.as_f64() * gv.as_f64();
                }
            }
        }
        let clip_scale = match clip_norm {
            Some(c) if sq_norm.sqrt() > c => c / sq_norm.sqrt(),
            _ => 1.0,
        };

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad.take() else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g[k].as_f64() * clip_scale;
                let mk = beta1 * m[k].as_f64() + (1.0 - beta1) * gk;
                let vk = beta2 * v[k].as_f64() + (1.0 - beta2) * gk * gk;
                m[k] = T::from_f64(mk);
                v[k] = T::from_f64(vk);
                let update = lr * (mk / bc1) / ((vk / bc2).sqrt() + eps);
                *w = T::from_f64(w.as_f64() - update);
            }
            p.grad = Some(g);
        }
        Ok(())
    }
}
