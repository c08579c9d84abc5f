use std::path::Path;

use crate::data::save_rgb_png;
use crate::error::{Result, ScanError};
use crate::tensor::Tensor;

use super::mask::BinaryMask;

/// Contour colours for left lung, right lung and heart.
pub const CONTOUR_COLOURS: [[f32; 3]; 3] = [[255.0, 64.0, 64.0], [64.0, 255.0, 64.0], [64.0, 128.0, 255.0]];

/// Foreground pixels with a 4-neighbour outside the mask or on the grid edge.
pub fn contour(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, mask.class, |y, x| {
        mask.get(y, x)
            && (y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1))
    })
}

/// RGB `[H, W, 3]` image: the input stretched to 0..255 in gray with the
/// contours of `masks` drawn on top in class colours.
pub fn render_overlay(image: &Tensor, masks: &[&BinaryMask]) -> Result<Tensor> {
    let (h, w, c) = image.hwc()?;
    if c != 1 {
        return Err(ScanError::shape(format!("overlay needs a one-channel image, got {:?}", image.shape())));
    }
    let (lo, hi) = image.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = Tensor::zeros(&[h, w, 3]);
    for y in 0..h {
        for x in 0..w {
            let g = (image.at3(y, x, 0) - lo) * scale;
            for ch in 0..3 {
                out.set3(y, x, ch, g);
            }
        }
    }
    for m in masks {
        if m.dims() != (h, w) {
            return Err(ScanError::shape(format!("mask {:?} on image {h}x{w}", m.dims())));
        }
        let colour = CONTOUR_COLOURS[m.class.min(CONTOUR_COLOURS.len() - 1)];
        let edge = contour(m);
        for y in 0..h {
            for x in 0..w {
                if edge.get(y, x) {
                    for (ch, v) in colour.iter().enumerate() {
                        out.set3(y, x, ch, *v);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn write_overlay(image: &Tensor, masks: &[&BinaryMask], path: &Path) -> Result<()> {
    save_rgb_png(&render_overlay(image, masks)?, path)
}
