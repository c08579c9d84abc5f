use crate::error::{Result, ScanError};
use crate::par;
use crate::tensor::{Scalar, Tensor};

use super::ROW_BLOCK;

/// Which gradients a backward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradRequest {
    pub input: bool,
    pub params: bool,
}

impl GradRequest {
    pub const ALL: GradRequest = GradRequest { input: true, params: true };
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn kernel_dims<T: Scalar>(kernel: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match kernel.shape()[..] {
        [kh, kw, ci, co] => Ok((kh, kw, ci, co)),
        _ => Err(ScanError::shape(format!("kernel must be [kh,kw,in,out], got {:?}", kernel.shape()))),
    }
}

fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (h, w, c) = input.hwc()?;
    let (kh, kw, ci, co) = kernel_dims(kernel)?;
    if ci != c {
        return Err(ScanError::shape(format!(
            "conv input {:?} has {c} channels but kernel {:?} expects {ci}",
            input.shape(),
            kernel.shape()
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(ScanError::shape(format!("conv kernel {:?} must have odd extents", kernel.shape())));
    }
    if h == 0 || w == 0 {
        return Err(ScanError::shape(format!("empty conv input {:?}", input.shape())));
    }
    Ok((h, w, kh, kw, ci, co))
}

/// Stride-1 convolution with zero "same" padding of `(k-1)/2`.
///
/// `out[y, x, o] = bias[o] + sum_{ky, kx, i} in[y+ky-ph, x+kx-pw, i] * k[ky, kx, i, o]`
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, kh, kw, cin, cout) = check_conv(input, kernel)?;
    if bias.len() != cout {
        return Err(ScanError::shape(format!("bias {:?} for {cout} output channels", bias.shape())));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let inp = input.data();
    let ker = kernel.data();
    let b = bias.data();
    let mut out = vec![T::zero(); h * w * cout];
    par::for_each_chunk_mut(&mut out, w * cout, |y, row| {
        for x in 0..w {
            let o = &mut row[x * cout..(x + 1) * cout];
            o.copy_from_slice(b);
            for ky in 0..kh {
                let Some(iy) = (y + ky).checked_sub(ph).filter(|&v| v < h) else { continue };
                for kx in 0..kw {
                    let Some(ix) = (x + kx).checked_sub(pw).filter(|&v| v < w) else { continue };
                    let px = &inp[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let kbase = (ky * kw + kx) * cin * cout;
                    for (ci, &a) in px.iter().enumerate() {
                        let wrow = &ker[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (ov, &wv) in o.iter_mut().zip(wrow) {
                            *ov += a * wv;
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(&[h, w, cout], out)
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    upstream: &Tensor<T>,
    want: GradRequest,
) -> Result<ConvGrads<T>> {
    let (h, w, kh, kw, cin, cout) = check_conv(input, kernel)?;
    if upstream.shape() != [h, w, cout] {
        return Err(ScanError::shape(format!(
            "upstream gradient {:?} does not match conv output [{h},{w},{cout}]",
            upstream.shape()
        )));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let inp = input.data();
    let ker = kernel.data();
    let g = upstream.data();

    let grad_input = if want.input {
        let mut gi = vec![T::zero(); h * w * cin];
        par::for_each_chunk_mut(&mut gi, w * cin, |iy, row| {
            for ix in 0..w {
                let dst = &mut row[ix * cin..(ix + 1) * cin];
                for ky in 0..kh {
                    let Some(oy) = (iy + ph).checked_sub(ky).filter(|&v| v < h) else { continue };
                    for kx in 0..kw {
                        let Some(ox) = (ix + pw).checked_sub(kx).filter(|&v| v < w) else { continue };
                        let gp = &g[(oy * w + ox) * cout..(oy * w + ox + 1) * cout];
                        let kbase = (ky * kw + kx) * cin * cout;
                        for (ci, d) in dst.iter_mut().enumerate() {
                            let wrow = &ker[kbase + ci * cout..kbase + (ci + 1) * cout];
                            let mut acc = T::zero();
                            for (&gv, &wv) in gp.iter().zip(wrow) {
                                acc += gv * wv;
                            }
                            *d += acc;
                        }
                    }
                }
            }
        });
        Some(Tensor::from_vec(&[h, w, cin], gi)?)
    } else {
        None
    };

    let (grad_kernel, grad_bias) = if want.params {
        let ksize = kh * kw * cin * cout;
        let blocks = h.div_ceil(ROW_BLOCK);
        let partials = par::map_range(blocks, |b| {
            let mut acc = vec![T::zero(); ksize];
            for y in b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(h) {
                for x in 0..w {
                    let gp = &g[(y * w + x) * cout..(y * w + x + 1) * cout];
                    for ky in 0..kh {
                        let Some(iy) = (y + ky).checked_sub(ph).filter(|&v| v < h) else { continue };
                        for kx in 0..kw {
                            let Some(ix) = (x + kx).checked_sub(pw).filter(|&v| v < w) else { continue };
                            let px = &inp[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                            let kbase = (ky * kw + kx) * cin * cout;
                            for (ci, &a) in px.iter().enumerate() {
                                let dst = &mut acc[kbase + ci * cout..kbase + (ci + 1) * cout];
                                for (d, &gv) in dst.iter_mut().zip(gp) {
                                    *d += a * gv;
                                }
                            }
                        }
                    }
                }
            }
            acc
        });
        let mut gk = vec![T::zero(); ksize];
        for p in &partials {
            gk.iter_mut().zip(p).for_each(|(a, &b)| *a += b);
        }
        let mut gb = vec![T::zero(); cout];
        for px in g.chunks_exact(cout) {
            gb.iter_mut().zip(px).for_each(|(a, &b)| *a += b);
        }
        (Some(Tensor::from_vec(kernel.shape(), gk)?), Some(Tensor::from_vec(&[cout], gb)?))
    } else {
        (None, None)
    };

    Ok(ConvGrads { input: grad_input, kernel: grad_kernel, bias: grad_bias })
}
