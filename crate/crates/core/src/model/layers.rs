use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, ScanError};
use crate::ops::{self, GradRequest, NormCache, NormMode, NormParams};
use crate::par;
use crate::tensor::{Scalar, Tensor};

use super::spec::{LayerKind, LayerSpec};

/// A minibatch of `[H, W, C]` activations.
pub type Batch<T> = Vec<Tensor<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer<T> {
    pub gain: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv { kernel: Tensor<T>, bias: Tensor<T> },
    Norm(NormLayer<T>),
    Relu,
    /// Pre-activation residual block: norm, relu, conv, norm, relu, conv,
    /// plus the identity skip.
    Residual(Vec<Layer<T>>),
    AvgPool,
    TransposedConv { kernel: Tensor<T>, bias: Tensor<T>, stride: usize },
    GlobalPool,
    Dense { weight: Tensor<T>, bias: Tensor<T> },
}

/// Per-layer state kept from the forward pass.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    Input(Arc<Batch<T>>),
    Norm(Arc<Batch<T>>, NormCache),
    Shape(Vec<usize>),
    Residual(Vec<Cache<T>>),
}

fn gaussian<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)))
}

impl<T: Scalar> Layer<T> {
    /// Builds the runtime layer for one schedule entry. Heads (softmax,
    /// sigmoid) have no layer and yield `None`.
    pub fn from_spec<R: Rng>(spec: &LayerSpec, rng: &mut R) -> Result<Option<Self>> {
        let (k, i, o) = (spec.kernel, spec.in_channels, spec.out_channels);
        let layer = match spec.kind {
            LayerKind::Conv => Layer::conv(k, i, o, rng),
            LayerKind::Norm => Layer::Norm(NormLayer::new(i)),
            LayerKind::Relu => Layer::Relu,
            LayerKind::ResBlock => {
                if i != o {
                    return Err(ScanError::Config(format!("residual block {i}->{o} needs a projection")));
                }
                Layer::Residual(vec![
                    Layer::Norm(NormLayer::new(i)),
                    Layer::Relu,
                    Layer::conv(k, i, i, rng),
                    Layer::Norm(NormLayer::new(i)),
                    Layer::Relu,
                    Layer::conv(k, i, i, rng),
                ])
            }
            LayerKind::AvgPool => Layer::AvgPool,
            LayerKind::TransposedConv => {
                let stride = 2;
                ops::transposed::transposed_crop(k, stride)?;
                let fan_in = (k * k * i / (stride * stride)).max(1);
                Layer::TransposedConv { kernel: gaussian(&[k, k, i, o], fan_in, rng), bias: Tensor::zeros(&[o]), stride }
            }
            LayerKind::GlobalPool => Layer::GlobalPool,
            LayerKind::Dense => Layer::Dense { weight: gaussian(&[i, o], i, rng), bias: Tensor::zeros(&[o]) },
            LayerKind::Softmax | LayerKind::Sigmoid => return Ok(None),
        };
        Ok(Some(layer))
    }

    fn conv<R: Rng>(k: usize, i: usize, o: usize, rng: &mut R) -> Self {
        Layer::Conv { kernel: gaussian(&[k, k, i, o], k * k * i, rng), bias: Tensor::zeros(&[o]) }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv { kernel, bias } | Layer::TransposedConv { kernel, bias, .. } => vec![kernel, bias],
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Norm(n) => vec![&n.gain, &n.shift],
            Layer::Residual(inner) => inner.iter().flat_map(|l| l.params()).collect(),
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv { kernel, bias } | Layer::TransposedConv { kernel, bias, .. } => vec![kernel, bias],
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Norm(n) => vec![&mut n.gain, &mut n.shift],
            Layer::Residual(inner) => inner.iter_mut().flat_map(|l| l.params_mut()).collect(),
            _ => vec![],
        }
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        match self {
            Layer::Conv { .. } | Layer::TransposedConv { .. } => {
                vec![format!("{prefix}.kernel"), format!("{prefix}.bias")]
            }
            Layer::Dense { .. } => vec![format!("{prefix}.weight"), format!("{prefix}.bias")],
            Layer::Norm(_) => vec![format!("{prefix}.gain"), format!("{prefix}.shift")],
            Layer::Residual(inner) => inner
                .iter()
                .enumerate()
                .flat_map(|(i, l)| l.param_names(&format!("{prefix}.{i}")))
                .collect(),
            _ => vec![],
        }
    }

    /// Non-learnable state (running normalization statistics).
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Norm(n) => vec![&n.running_mean, &n.running_var],
            Layer::Residual(inner) => inner.iter().flat_map(|l| l.buffers()).collect(),
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Norm(n) => vec![&mut n.running_mean, &mut n.running_var],
            Layer::Residual(inner) => inner.iter_mut().flat_map(|l| l.buffers_mut()).collect(),
            _ => vec![],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv { kernel, bias } => Layer::Conv { kernel: kernel.cast(), bias: bias.cast() },
            Layer::Norm(n) => Layer::Norm(NormLayer {
                gain: n.gain.cast(),
                shift: n.shift.cast(),
                running_mean: n.running_mean.cast(),
                running_var: n.running_var.cast(),
            }),
            Layer::Relu => Layer::Relu,
            Layer::Residual(inner) => Layer::Residual(inner.iter().map(|l| l.cast()).collect()),
            Layer::AvgPool => Layer::AvgPool,
            Layer::TransposedConv { kernel, bias, stride } => {
                Layer::TransposedConv { kernel: kernel.cast(), bias: bias.cast(), stride: *stride }
            }
            Layer::GlobalPool => Layer::GlobalPool,
            Layer::Dense { weight, bias } => Layer::Dense { weight: weight.cast(), bias: bias.cast() },
        }
    }

    pub fn forward(&self, x: Arc<Batch<T>>, mode: NormMode) -> Result<(Arc<Batch<T>>, Cache<T>)> {
        let per_sample = |f: &(dyn Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync)| -> Result<Batch<T>> {
            par::map_slice(&x, f).into_iter().collect()
        };
        let (out, cache) = match self {
            Layer::Conv { kernel, bias } => {
                (per_sample(&|s| ops::conv2d(s, kernel, bias))?, Cache::Input(x.clone()))
            }
            Layer::TransposedConv { kernel, bias, stride } => (
                per_sample(&|s| ops::transposed_conv2d(s, kernel, bias, *stride))?,
                Cache::Input(x.clone()),
            ),
            Layer::Relu => (per_sample(&|s| Ok(ops::relu(s)))?, Cache::Input(x.clone())),
            Layer::AvgPool => (per_sample(&|s| ops::avg_pool2(s))?, Cache::Shape(shape_of(&x)?)),
            Layer::GlobalPool => (per_sample(&|s| ops::global_avg_pool(s))?, Cache::Shape(shape_of(&x)?)),
            Layer::Dense { weight, bias } => {
                (per_sample(&|s| ops::dense(s, weight, bias))?, Cache::Input(x.clone()))
            }
            Layer::Norm(n) => {
                let params = NormParams {
                    gain: &n.gain,
                    shift: &n.shift,
                    running_mean: &n.running_mean,
                    running_var: &n.running_var,
                };
                let (out, stats) = ops::batch_norm_channel(&x, params, mode)?;
                (out, Cache::Norm(x.clone(), stats))
            }
            Layer::Residual(inner) => {
                let (branch, caches) = forward_layers(inner, x.clone(), mode)?;
                let mut out = Arc::try_unwrap(branch).unwrap_or_else(|a| (*a).clone());
                for (o, s) in out.iter_mut().zip(x.iter()) {
                    o.add_assign(s)?;
                }
                (out, Cache::Residual(caches))
            }
        };
        Ok((Arc::new(out), cache))
    }

    /// Pushes parameter gradients in reverse parameter order onto
    /// `param_grads` when requested; returns the input gradient when
    /// `want.input`.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad: Batch<T>,
        want: GradRequest,
        param_grads: &mut Vec<Tensor<T>>,
    ) -> Result<Option<Batch<T>>> {
        match (self, cache) {
            (Layer::Conv { kernel, .. }, Cache::Input(x)) | (Layer::TransposedConv { kernel, .. }, Cache::Input(x)) => {
                let stride = match self {
                    Layer::TransposedConv { stride, .. } => Some(*stride),
                    _ => None,
                };
                let idx: Vec<usize> = (0..x.len()).collect();
                let per: Vec<ops::ConvGrads<T>> = par::map_slice(&idx, |&n| match stride {
                    Some(s) => ops::transposed_conv2d_backward(&x[n], kernel, &grad[n], s, want),
                    None => ops::conv2d_backward(&x[n], kernel, &grad[n], want),
                })
                .into_iter()
                .collect::<Result<_>>()?;
                if want.params {
                    let (mut gk, mut gb) = (Tensor::zeros(kernel.shape()), Tensor::zeros(&[kernel.shape()[3]]));
                    for g in &per {
                        gk.add_assign(g.kernel.as_ref().expect("requested"))?;
                        gb.add_assign(g.bias.as_ref().expect("requested"))?;
                    }
                    param_grads.push(gb);
                    param_grads.push(gk);
                }
                Ok(want.input.then(|| per.into_iter().map(|g| g.input.expect("requested")).collect()))
            }
            (Layer::Dense { weight, .. }, Cache::Input(x)) => {
                let mut gi = Vec::with_capacity(x.len());
                let (mut gw, mut gb) = (Tensor::zeros(weight.shape()), Tensor::zeros(&[weight.shape()[1]]));
                for (s, g) in x.iter().zip(&grad) {
                    let (i, w, b) = ops::dense_backward(s, weight, g)?;
                    gi.push(i);
                    gw.add_assign(&w)?;
                    gb.add_assign(&b)?;
                }
                if want.params {
                    param_grads.push(gb);
                    param_grads.push(gw);
                }
                Ok(want.input.then_some(gi))
            }
            (Layer::Relu, Cache::Input(x)) => {
                if !want.input {
                    return Ok(None);
                }
                let idx: Vec<usize> = (0..x.len()).collect();
                let out = par::map_slice(&idx, |&n| ops::relu_backward(&x[n], &grad[n]));
                Ok(Some(out.into_iter().collect::<Result<_>>()?))
            }
            (Layer::AvgPool, Cache::Shape(shape)) => {
                if !want.input {
                    return Ok(None);
                }
                let out: Result<Batch<T>> = grad.iter().map(|g| ops::avg_pool2_backward(shape, g)).collect();
                Ok(Some(out?))
            }
            (Layer::GlobalPool, Cache::Shape(shape)) => {
                if !want.input {
                    return Ok(None);
                }
                let out: Result<Batch<T>> = grad.iter().map(|g| ops::global_avg_pool_backward(shape, g)).collect();
                Ok(Some(out?))
            }
            (Layer::Norm(n), Cache::Norm(x, stats)) => {
                let g = ops::batch_norm_backward(x, &n.gain, stats, &grad, want)?;
                if want.params {
                    param_grads.push(g.shift.expect("requested"));
                    param_grads.push(g.gain.expect("requested"));
                }
                Ok(g.inputs)
            }
            (Layer::Residual(inner), Cache::Residual(caches)) => {
                let skip = want.input.then(|| grad.clone());
                let branch = backward_layers(inner, caches, grad, want, param_grads)?;
                match (skip, branch) {
                    (Some(mut s), Some(b)) => {
                        for (a, g) in s.iter_mut().zip(&b) {
                            a.add_assign(g)?;
                        }
                        Ok(Some(s))
                    }
                    _ => Ok(None),
                }
            }
            _ => Err(ScanError::shape("layer/cache mismatch in backward pass")),
        }
    }
}

impl<T: Scalar> NormLayer<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gain: Tensor::full(&[c], T::one()),
            shift: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], T::one()),
        }
    }
}

fn shape_of<T: Scalar>(x: &Batch<T>) -> Result<Vec<usize>> {
    x.first()
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| ScanError::shape("empty minibatch"))
}

pub fn forward_layers<T: Scalar>(
    layers: &[Layer<T>],
    mut x: Arc<Batch<T>>,
    mode: NormMode,
) -> Result<(Arc<Batch<T>>, Vec<Cache<T>>)> {
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let (y, c) = layer.forward(x, mode)?;
        caches.push(c);
        x = y;
    }
    Ok((x, caches))
}

pub fn backward_layers<T: Scalar>(
    layers: &[Layer<T>],
    caches: &[Cache<T>],
    mut grad: Batch<T>,
    want: GradRequest,
    param_grads: &mut Vec<Tensor<T>>,
) -> Result<Option<Batch<T>>> {
    if layers.len() != caches.len() {
        return Err(ScanError::shape("trace does not belong to this network"));
    }
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let need_input = i > 0 || want.input;
        let out = layer.backward(cache, grad, GradRequest { input: need_input, params: want.params }, param_grads)?;
        match out {
            Some(g) => grad = g,
            None => return Ok(None),
        }
    }
    Ok(Some(grad))
}

/// Applies the running-statistics update for every norm layer in a trace.
pub fn absorb_stats<T: Scalar>(layers: &mut [Layer<T>], caches: &[Cache<T>]) {
    for (layer, cache) in layers.iter_mut().zip(caches) {
        match (layer, cache) {
            (Layer::Norm(n), Cache::Norm(_, stats)) => stats.update_running(&mut n.running_mean, &mut n.running_var),
            (Layer::Residual(inner), Cache::Residual(c)) => absorb_stats(inner, c),
            _ => {}
        }
    }
}
