use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};

/// 2x2 average pooling with stride 2.
pub fn avg_pool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = input.hwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ScanError::shape(format!("avg_pool2 needs even extents, got {:?}", input.shape())));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let x = input.data();
    let mut out = vec![T::zero(); oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let base = ((2 * oy + dy) * w + 2 * ox + dx) * c;
                o.iter_mut().zip(&x[base..base + c]).for_each(|(a, &b)| *a += b);
            }
            o.iter_mut().for_each(|v| *v *= quarter);
        }
    }
    Tensor::from_vec(&[oh, ow, c], out)
}

/// Spreads each upstream value evenly (divided by 4) over its window.
pub fn avg_pool2_backward<T: Scalar>(input_shape: &[usize], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [h, w, c] = input_shape[..] else {
        return Err(ScanError::shape(format!("expected [H,W,C], got {input_shape:?}")));
    };
    if upstream.shape() != [h / 2, w / 2, c] || h % 2 != 0 || w % 2 != 0 {
        return Err(ScanError::shape(format!(
            "pool upstream {:?} vs input {input_shape:?}",
            upstream.shape()
        )));
    }
    let quarter = T::from_f64(0.25);
    let g = upstream.data();
    let ow = w / 2;
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let src = ((y / 2) * ow + x / 2) * c;
            let dst = (y * w + x) * c;
            for ch in 0..c {
                out[dst + ch] = g[src + ch] * quarter;
            }
        }
    }
    Tensor::from_vec(input_shape, out)
}
