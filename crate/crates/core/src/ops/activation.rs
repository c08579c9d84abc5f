use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != upstream.shape() {
        return Err(ScanError::shape(format!("relu {:?} vs {:?}", input.shape(), upstream.shape())));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn check_mask<T: Scalar>(input: &Tensor<T>, active: &[bool]) -> Result<usize> {
    let (_, _, c) = input.hwc()?;
    if active.len() != c || !active.iter().any(|&a| a) {
        return Err(ScanError::shape(format!(
            "channel mask {active:?} for input {:?}",
            input.shape()
        )));
    }
    Ok(c)
}

/// Per-pixel log-softmax over the active channels; inactive channels get
/// `-inf`.
pub fn log_softmax_channels<T: Scalar>(input: &Tensor<T>, active: &[bool]) -> Result<Tensor<T>> {
    let c = check_mask(input, active)?;
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        let max = px
            .iter()
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        let sum: T = px
            .iter()
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| (v - max).exp())
            .sum();
        let lse = max + sum.ln();
        for (v, &a) in px.iter_mut().zip(active) {
            *v = if a { *v - lse } else { T::neg_infinity() };
        }
    }
    Ok(out)
}

/// Softmax over channels restricted to `active`; inactive channels are 0.
pub fn softmax_channels_masked<T: Scalar>(input: &Tensor<T>, active: &[bool]) -> Result<Tensor<T>> {
    let c = check_mask(input, active)?;
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        let max = px
            .iter()
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (v, &a) in px.iter_mut().zip(active) {
            *v = if a { (*v - max).exp() } else { T::zero() };
            sum += *v;
        }
        px.iter_mut().for_each(|v| *v = *v / sum);
    }
    Ok(out)
}

/// Per-pixel softmax over the channel axis, max-subtracted.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, c) = input.hwc()?;
    softmax_channels_masked(input, &vec![true; c])
}

/// Vector-Jacobian product of the (masked) softmax:
/// `dz_c = p_c * (g_c - sum_k p_k g_k)` over active channels.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, upstream: &Tensor<T>, active: &[bool]) -> Result<Tensor<T>> {
    let c = check_mask(probs, active)?;
    if probs.shape() != upstream.shape() {
        return Err(ScanError::shape(format!("softmax {:?} vs {:?}", probs.shape(), upstream.shape())));
    }
    let mut out = vec![T::zero(); probs.len()];
    for ((o, p), g) in out
        .chunks_exact_mut(c)
        .zip(probs.data().chunks_exact(c))
        .zip(upstream.data().chunks_exact(c))
    {
        let dot: T = p.iter().zip(g).zip(active).filter(|(_, &a)| a).map(|((&p, &g), _)| p * g).sum();
        for k in 0..c {
            if active[k] {
                o[k] = p[k] * (g[k] - dot);
            }
        }
    }
    Tensor::from_vec(probs.shape(), out)
}
