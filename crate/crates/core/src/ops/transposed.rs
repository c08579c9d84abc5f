use crate::error::{Result, ScanError};
use crate::par;
use crate::tensor::{Scalar, Tensor};

use super::conv::{kernel_dims, ConvGrads, GradRequest};
use super::ROW_BLOCK;

/// Checks a kernel/stride pairing and returns the crop applied on each side.
///
/// Supported: `k == stride` (non-overlapping scatter) and `k == 2 * stride`
/// (overlapping scatter cropped by `stride / 2`). Both give exactly
/// `h * stride` output rows.
pub fn transposed_crop(kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 || kernel < stride || (kernel - stride) % 2 != 0 || kernel > 2 * stride {
        return Err(ScanError::Config(format!(
            "transposed conv kernel {kernel} is incompatible with stride {stride}"
        )));
    }
    Ok((kernel - stride) / 2)
}

fn check<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (h, w, c) = input.hwc()?;
    let (kh, kw, ci, co) = kernel_dims(kernel)?;
    if ci != c {
        return Err(ScanError::shape(format!(
            "transposed conv input {:?} vs kernel {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    if kh != kw {
        return Err(ScanError::shape(format!("transposed conv kernel {:?} must be square", kernel.shape())));
    }
    let crop = transposed_crop(kh, stride)?;
    Ok((h, w, kh, ci, co, crop))
}

/// Adjoint of a strided convolution: every input pixel scatters `k x k`
/// weighted copies into the output at stride `stride`.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (h, w, k, cin, cout, crop) = check(input, kernel, stride)?;
    if bias.len() != cout {
        return Err(ScanError::shape(format!("bias {:?} for {cout} output channels", bias.shape())));
    }
    let (oh, ow) = (h * stride, w * stride);
    let inp = input.data();
    let ker = kernel.data();
    let b = bias.data();
    let mut out = vec![T::zero(); oh * ow * cout];
    // Gather form: output pixel (oy, ox) receives from input (iy, ix) with
    // iy * stride + ky - crop == oy.
    par::for_each_chunk_mut(&mut out, ow * cout, |oy, row| {
        for ox in 0..ow {
            let o = &mut row[ox * cout..(ox + 1) * cout];
            o.copy_from_slice(b);
            for ky in 0..k {
                let Some(ty) = (oy + crop).checked_sub(ky) else { continue };
                if ty % stride != 0 || ty / stride >= h {
                    continue;
                }
                let iy = ty / stride;
                for kx in 0..k {
                    let Some(tx) = (ox + crop).checked_sub(kx) else { continue };
                    if tx % stride != 0 || tx / stride >= w {
                        continue;
                    }
                    let ix = tx / stride;
                    let px = &inp[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let kbase = (ky * k + kx) * cin * cout;
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
    Tensor::from_vec(&[oh, ow, cout], out)
}

pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    want: GradRequest,
) -> Result<ConvGrads<T>> {
    let (h, w, k, cin, cout, crop) = check(input, kernel, stride)?;
    let (oh, ow) = (h * stride, w * stride);
    if upstream.shape() != [oh, ow, cout] {
        return Err(ScanError::shape(format!(
            "upstream gradient {:?} does not match transposed conv output [{oh},{ow},{cout}]",
            upstream.shape()
        )));
    }
    let inp = input.data();
    let ker = kernel.data();
    let g = upstream.data();
    let out_index = |iy: usize, ky: usize, limit: usize| -> Option<usize> {
        (iy * stride + ky).checked_sub(crop).filter(|&v| v < limit)
    };

    let grad_input = if want.input {
        let mut gi = vec![T::zero(); h * w * cin];
        par::for_each_chunk_mut(&mut gi, w * cin, |iy, row| {
            for ix in 0..w {
                let dst = &mut row[ix * cin..(ix + 1) * cin];
                for ky in 0..k {
                    let Some(oy) = out_index(iy, ky, oh) else { continue };
                    for kx in 0..k {
                        let Some(ox) = out_index(ix, kx, ow) else { continue };
                        let gp = &g[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                        let kbase = (ky * k + kx) * cin * cout;
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
        let ksize = k * k * cin * cout;
        let blocks = h.div_ceil(ROW_BLOCK);
        let partials = par::map_range(blocks, |b| {
            let mut acc = vec![T::zero(); ksize];
            for iy in b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(h) {
                for ix in 0..w {
                    let px = &inp[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    for ky in 0..k {
                        let Some(oy) = out_index(iy, ky, oh) else { continue };
                        for kx in 0..k {
                            let Some(ox) = out_index(ix, kx, ow) else { continue };
                            let gp = &g[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                            let kbase = (ky * k + kx) * cin * cout;
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
