use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, ScanError};
use crate::ops::{GradRequest, NormMode};
use crate::tensor::{Scalar, Tensor};

use super::layers::{absorb_stats, backward_layers, forward_layers, Batch, Cache, Layer};
use super::spec::{self, LayerSpec};

/// An ordered layer graph with owned parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
}

/// Forward-pass record needed by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Backward<T> {
    pub input: Option<Batch<T>>,
    /// Parameter gradients in [`Network::params`] order.
    pub params: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> Network<T> {
    /// Instantiates a schedule with fan-in scaled Gaussian weights drawn from
    /// a ChaCha8 stream seeded by `seed`.
    pub fn from_specs(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        spec::validate_schedule(&specs).map_err(ScanError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        for s in &specs {
            if let Some(l) = Layer::from_spec(s, &mut rng)? {
                layers.push(l);
            }
        }
        Ok(Self { specs, layers })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn fingerprint(&self) -> String {
        spec::fingerprint(&self.specs)
    }

    pub fn forward(&self, x: Batch<T>, mode: NormMode) -> Result<(Batch<T>, Trace<T>)> {
        if x.is_empty() {
            return Err(ScanError::shape("forward on an empty minibatch"));
        }
        let (out, caches) = forward_layers(&self.layers, Arc::new(x), mode)?;
        let out = Arc::try_unwrap(out).unwrap_or_else(|a| (*a).clone());
        Ok((out, Trace { caches }))
    }

    pub fn backward(&self, trace: &Trace<T>, grad: Batch<T>, want: GradRequest) -> Result<Backward<T>> {
        let mut rev = Vec::new();
        let input = backward_layers(&self.layers, &trace.caches, grad, want, &mut rev)?;
        let params = want.params.then(|| {
            rev.reverse();
            rev
        });
        Ok(Backward { input, params })
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// averages.
    pub fn absorb_running_stats(&mut self, trace: &Trace<T>) {
        absorb_stats(&mut self.layers, &trace.caches);
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_names(&format!("layer{i}")))
            .collect()
    }

    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Replaces every parameter's gradient buffer.
    pub fn set_grads(&mut self, grads: Vec<Tensor<T>>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != grads.len() {
            return Err(ScanError::shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.iter_mut().zip(grads) {
            if p.shape() != g.shape() {
                return Err(ScanError::shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            p.grad = Some(g.into_data());
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in self.params_mut() {
            p.grad = None;
        }
    }

    /// SHA-256 over parameter and buffer values, hex encoded.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.params().into_iter().chain(self.buffers()) {
            for v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network { specs: self.specs.clone(), layers: self.layers.iter().map(|l| l.cast()).collect() }
    }
}
