use crate::error::{Result, ScanError};
use crate::par;
use crate::tensor::{Scalar, Tensor};

use super::conv::GradRequest;

/// Variance floor inside the square root.
pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Normalize with the statistics of the current minibatch.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

pub struct NormParams<'a, T> {
    pub gain: &'a Tensor<T>,
    pub shift: &'a Tensor<T>,
    pub running_mean: &'a Tensor<T>,
    pub running_var: &'a Tensor<T>,
}

/// What the backward pass needs, plus the batch statistics for the
/// running-average update.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub mode: NormMode,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Population variance of the batch (train mode only).
    pub batch_var: Option<Vec<f64>>,
}

impl NormCache {
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running<T: Scalar>(&self, running_mean: &mut Tensor<T>, running_var: &mut Tensor<T>) {
        let Some(var) = &self.batch_var else { return };
        for (r, &m) in running_mean.data_mut().iter_mut().zip(&self.mean) {
            *r = T::from_f64(BN_MOMENTUM * r.as_f64() + (1.0 - BN_MOMENTUM) * m);
        }
        for (r, &v) in running_var.data_mut().iter_mut().zip(var) {
            *r = T::from_f64(BN_MOMENTUM * r.as_f64() + (1.0 - BN_MOMENTUM) * v);
        }
    }
}

#[derive(Clone, Debug)]
pub struct NormGrads<T> {
    pub inputs: Option<Vec<Tensor<T>>>,
    pub gain: Option<Tensor<T>>,
    pub shift: Option<Tensor<T>>,
}

fn channels<T: Scalar>(inputs: &[Tensor<T>]) -> Result<usize> {
    let first = inputs.first().ok_or_else(|| ScanError::shape("batch norm on an empty batch"))?;
    let (_, _, c) = first.hwc()?;
    for x in inputs {
        if x.hwc()?.2 != c {
            return Err(ScanError::shape(format!("mixed channel counts in batch: {:?}", x.shape())));
        }
    }
    Ok(c)
}

/// Per-channel sums over every sample, combined in sample order.
fn channel_sums<T: Scalar, F>(inputs: &[Tensor<T>], c: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, usize, T) -> f64 + Sync + Send,
{
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let partials = par::map_slice(&idx, |&n| {
        let mut acc = vec![0f64; c];
        for (p, px) in inputs[n].data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                acc[ch] += f(n, p * c + ch, v);
            }
        }
        acc
    });
    let mut total = vec![0f64; c];
    for p in partials {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    total
}

/// Per-channel standardization followed by `gain * x_hat + shift`.
pub fn batch_norm_channel<T: Scalar>(
    inputs: &[Tensor<T>],
    params: NormParams<'_, T>,
    mode: NormMode,
) -> Result<(Vec<Tensor<T>>, NormCache)> {
    let c = channels(inputs)?;
    for t in [params.gain, params.shift, params.running_mean, params.running_var] {
        if t.len() != c {
            return Err(ScanError::shape(format!("norm parameter {:?} for {c} channels", t.shape())));
        }
    }
    let (mean, var, batch_var) = match mode {
        NormMode::Train => {
            let count: usize = inputs.iter().map(|x| x.len() / c).sum();
            let n = count as f64;
            let mean: Vec<f64> = channel_sums(inputs, c, |_, _, v| v.as_f64()).into_iter().map(|s| s / n).collect();
            let var: Vec<f64> = channel_sums(inputs, c, |_, i, v| {
                let d = v.as_f64() - mean[i % c];
                d * d
            })
            .into_iter()
            .map(|s| s / n)
            .collect();
            (mean, var.clone(), Some(var))
        }
        NormMode::Eval => (
            params.running_mean.data().iter().map(|v| v.as_f64()).collect(),
            params.running_var.data().iter().map(|v| v.as_f64()).collect(),
            None,
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let scale: Vec<T> = (0..c).map(|ch| T::from_f64(params.gain.data()[ch].as_f64() * inv_std[ch])).collect();
    let offset: Vec<T> = (0..c)
        .map(|ch| T::from_f64(params.shift.data()[ch].as_f64() - mean[ch] * params.gain.data()[ch].as_f64() * inv_std[ch]))
        .collect();
    let outputs = par::map_slice(inputs, |x| {
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                px[ch] = px[ch] * scale[ch] + offset[ch];
            }
        }
        y
    });
    Ok((outputs, NormCache { mode, mean, inv_std, batch_var }))
}

pub fn batch_norm_backward<T: Scalar>(
    inputs: &[Tensor<T>],
    gain: &Tensor<T>,
    cache: &NormCache,
    upstream: &[Tensor<T>],
    want: GradRequest,
) -> Result<NormGrads<T>> {
    let c = channels(inputs)?;
    if upstream.len() != inputs.len() || inputs.iter().zip(upstream).any(|(x, g)| x.shape() != g.shape()) {
        return Err(ScanError::shape("batch norm upstream does not match inputs"));
    }
    let xhat = |n: usize, i: usize| -> f64 {
        let ch = i % c;
        (inputs[n].data()[i].as_f64() - cache.mean[ch]) * cache.inv_std[ch]
    };
    let sum_dy = channel_sums(upstream, c, |_, _, g| g.as_f64());
    let sum_dy_xhat = channel_sums(upstream, c, |n, i, g| g.as_f64() * xhat(n, i));
    let count: usize = inputs.iter().map(|x| x.len() / c).sum();
    let n = count as f64;

    let grad_inputs = if want.input {
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let grads = par::map_slice(&idx, |&s| {
            let g = upstream[s].data();
            let data = (0..g.len())
                .map(|i| {
                    let ch = i % c;
                    let k = gain.data()[ch].as_f64() * cache.inv_std[ch];
                    let v = match cache.mode {
                        NormMode::Train => {
                            k * (g[i].as_f64() - sum_dy[ch] / n - xhat(s, i) * sum_dy_xhat[ch] / n)
                        }
                        NormMode::Eval => k * g[i].as_f64(),
                    };
                    T::from_f64(v)
                })
                .collect();
            Tensor::from_vec(inputs[s].shape(), data)
        });
        Some(grads.into_iter().collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let (gain_grad, shift_grad) = if want.params {
        (
            Some(Tensor::from_vec(&[c], sum_dy_xhat.iter().map(|&v| T::from_f64(v)).collect())?),
            Some(Tensor::from_vec(&[c], sum_dy.iter().map(|&v| T::from_f64(v)).collect())?),
        )
    } else {
        (None, None)
    };
    Ok(NormGrads { inputs: grad_inputs, gain: gain_grad, shift: shift_grad })
}
