use crate::error::{Result, ScanError};
use crate::ops::{self, GradRequest, NormMode};
use crate::tensor::{Scalar, Tensor};
use crate::NUM_CLASSES;

use super::layers::Batch;
use super::network::{Backward, Network, Trace};
use super::spec::{self, LayerSpec, Widths, WIDTHS};

/// Critic scoring how likely a mask is to be a ground-truth annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNetwork<T = f32> {
    pub net: Network<T>,
}

impl<T: Scalar> CriticNetwork<T> {
    pub fn build(seed: u64, include_image: bool) -> Self {
        Self::with_widths(&WIDTHS, seed, include_image).expect("default schedule is valid")
    }

    pub fn with_widths(widths: &Widths, seed: u64, include_image: bool) -> Result<Self> {
        let channels = NUM_CLASSES + usize::from(include_image);
        Ok(Self { net: Network::from_specs(spec::critic_schedule(channels, widths), seed)? })
    }

    pub fn from_network(net: Network<T>) -> Result<Self> {
        let ok = net.specs().last().is_some_and(|s| s.kind == spec::LayerKind::Sigmoid);
        if !ok {
            return Err(ScanError::Config("network is not a critic schedule".into()));
        }
        Ok(Self { net })
    }

    pub fn input_channels(&self) -> usize {
        self.net.specs()[0].in_channels
    }

    pub fn includes_image(&self) -> bool {
        self.input_channels() == NUM_CLASSES + 1
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Schedule entries before the global pooling head.
    pub fn down_specs(&self) -> &[LayerSpec] {
        let specs = self.net.specs();
        let end = specs
            .iter()
            .position(|s| s.kind == spec::LayerKind::GlobalPool)
            .unwrap_or(specs.len());
        &specs[..end]
    }

    /// Stacks a mask with the optional image channel into critic input.
    pub fn compose_input(&self, mask: &Tensor<T>, image: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (_, _, c) = mask.hwc()?;
        if c != NUM_CLASSES {
            return Err(ScanError::shape(format!("critic mask must have {NUM_CLASSES} channels, got {:?}", mask.shape())));
        }
        match (image, self.includes_image()) {
            (None, false) => Ok(mask.clone()),
            (Some(img), true) => Tensor::concat_channels(&[mask, img]),
            (Some(img), false) => Err(ScanError::shape(format!(
                "image {:?} supplied to a {}-channel critic",
                img.shape(),
                self.input_channels()
            ))),
            (None, true) => Err(ScanError::shape("5-channel critic needs the image channel")),
        }
    }

    /// Raw logits, one per sample.
    pub fn forward_logits(&self, inputs: Batch<T>, mode: NormMode) -> Result<(Vec<T>, Trace<T>)> {
        for x in &inputs {
            let (h, w, c) = x.hwc()?;
            if c != self.input_channels() {
                return Err(ScanError::shape(format!(
                    "critic expects {} channels, got {:?}",
                    self.input_channels(),
                    x.shape()
                )));
            }
            super::check_resolution(h, w)?;
        }
        let (out, trace) = self.net.forward(inputs, mode)?;
        Ok((out.iter().map(|t| t.data()[0]).collect(), trace))
    }

    /// Backward pass from per-sample logit gradients.
    pub fn backward_logits(&self, trace: &Trace<T>, grad_logits: &[T], want: GradRequest) -> Result<Backward<T>> {
        let grads = grad_logits.iter().map(|&g| Tensor::full(&[1], g)).collect();
        self.net.backward(trace, grads, want)
    }

    /// Probability that `mask` is a ground-truth annotation (eval mode).
    pub fn forward_critic(&self, mask: &Tensor<T>, image: Option<&Tensor<T>>) -> Result<T> {
        let tol = T::from_f64(1.0 + 1e-5);
        for px in mask.data().chunks_exact(mask.hwc()?.2.max(1)) {
            let s: T = px.iter().copied().sum();
            if s > tol {
                return Err(ScanError::Validation(format!("mask channels sum to {s} > 1")));
            }
        }
        let x = self.compose_input(mask, image)?;
        let (z, _) = self.forward_logits(vec![x], NormMode::Eval)?;
        Ok(ops::sigmoid(z[0]))
    }

    pub fn cast<U: Scalar>(&self) -> CriticNetwork<U> {
        CriticNetwork { net: self.net.cast() }
    }
}
