use crate::error::{Result, ScanError};
use crate::ops::{self, NormMode};
use crate::tensor::{Scalar, Tensor};
use crate::NUM_CLASSES;

use super::layers::Batch;
use super::network::{Network, Trace};
use super::spec::{self, LayerSpec, Widths, WIDTHS};

/// Fully convolutional segmentor mapping a `[H, W, 1]` image to per-pixel
/// class logits (softmax applied separately).
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentorNetwork<T = f32> {
    pub net: Network<T>,
}

impl<T: Scalar> SegmentorNetwork<T> {
    pub fn build(seed: u64) -> Self {
        Self::with_widths(&WIDTHS, seed).expect("default schedule is valid")
    }

    pub fn with_widths(widths: &Widths, seed: u64) -> Result<Self> {
        Ok(Self { net: Network::from_specs(spec::segmentor_schedule(widths), seed)? })
    }

    pub fn from_network(net: Network<T>) -> Result<Self> {
        let specs = net.specs();
        let ok = specs.first().is_some_and(|s| s.in_channels == 1)
            && specs.last().is_some_and(|s| s.kind == spec::LayerKind::Softmax);
        if !ok {
            return Err(ScanError::Config("network is not a segmentor schedule".into()));
        }
        Ok(Self { net })
    }

    pub fn num_classes(&self) -> usize {
        self.net.specs().last().map_or(NUM_CLASSES, |s| s.out_channels)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn conv_layer_count(&self) -> usize {
        spec::count_conv_layers(self.net.specs())
    }

    /// Schedule entries up to and including the 64-map box.
    pub fn down_specs(&self) -> &[LayerSpec] {
        let specs = self.net.specs();
        let end = specs
            .iter()
            .position(|s| s.kind == spec::LayerKind::TransposedConv)
            .unwrap_or(specs.len());
        &specs[..end]
    }

    pub fn forward_logits(&self, images: Batch<T>, mode: NormMode) -> Result<(Batch<T>, Trace<T>)> {
        for img in &images {
            let (h, w, c) = img.hwc()?;
            if c != 1 {
                return Err(ScanError::shape(format!("segmentor expects [H,W,1], got {:?}", img.shape())));
            }
            super::check_resolution(h, w)?;
        }
        self.net.forward(images, mode)
    }

    /// Per-pixel class distribution for one image.
    pub fn forward_segment(&self, image: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let (logits, _) = self.forward_logits(vec![image.clone()], mode)?;
        ops::softmax_channels(&logits[0])
    }

    pub fn cast<U: Scalar>(&self) -> SegmentorNetwork<U> {
        SegmentorNetwork { net: self.net.cast() }
    }
}
