use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};

/// Mean over the spatial axes: `[H, W, C] -> [C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = input.hwc()?;
    let mut acc = vec![0f64; c];
    for px in input.data().chunks_exact(c) {
        acc.iter_mut().zip(px).for_each(|(a, &v)| *a += v.as_f64());
    }
    let n = (h * w) as f64;
    Tensor::from_vec(&[c], acc.into_iter().map(|v| T::from_f64(v / n)).collect())
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [h, w, c] = input_shape[..] else {
        return Err(ScanError::shape(format!("expected [H,W,C], got {input_shape:?}")));
    };
    if upstream.len() != c {
        return Err(ScanError::shape(format!("pool upstream {:?} for {c} channels", upstream.shape())));
    }
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let scaled: Vec<T> = upstream.data().iter().map(|&g| g * inv).collect();
    let mut out = Vec::with_capacity(h * w * c);
    for _ in 0..h * w {
        out.extend_from_slice(&scaled);
    }
    Tensor::from_vec(input_shape, out)
}

/// Fully connected layer: `y = x W + b` with `W: [in, out]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [cin, cout] = weight.shape()[..] else {
        return Err(ScanError::shape(format!("dense weight {:?}", weight.shape())));
    };
    if input.len() != cin || bias.len() != cout {
        return Err(ScanError::shape(format!(
            "dense input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = bias.data().to_vec();
    for (i, &x) in input.data().iter().enumerate() {
        let row = &weight.data()[i * cout..(i + 1) * cout];
        out.iter_mut().zip(row).for_each(|(o, &w)| *o += x * w);
    }
    Tensor::from_vec(&[cout], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [cin, cout] = weight.shape()[..] else {
        return Err(ScanError::shape(format!("dense weight {:?}", weight.shape())));
    };
    if input.len() != cin || upstream.len() != cout {
        return Err(ScanError::shape("dense backward shapes".to_string()));
    }
    let g = upstream.data();
    let mut gi = vec![T::zero(); cin];
    let mut gw = vec![T::zero(); cin * cout];
    for (i, &x) in input.data().iter().enumerate() {
        let row = &weight.data()[i * cout..(i + 1) * cout];
        gi[i] = row.iter().zip(g).map(|(&w, &g)| w * g).sum();
        gw[i * cout..(i + 1) * cout].iter_mut().zip(g).for_each(|(d, &g)| *d = x * g);
    }
    Ok((
        Tensor::from_vec(input.shape(), gi)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[cout], g.to_vec())?,
    ))
}
