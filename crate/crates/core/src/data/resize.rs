//! Bilinear resampling and mask re-encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};
use crate::par;
use crate::tensor::Tensor;
use crate::{BACKGROUND, NUM_CLASSES};

/// Where output samples fall on the source grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Pixel centers coincide: `src = (dst + 0.5) * in / out - 0.5`.
    #[default]
    Centers,
    /// Corner pixels coincide: `src = dst * (in - 1) / (out - 1)`.
    Corners,
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize, alignment: Alignment) -> Vec<Tap> {
    (0..dst)
        .map(|o| {
            let pos = match alignment {
                Alignment::Centers => (o as f64 + 0.5) * src as f64 / dst as f64 - 0.5,
                Alignment::Corners if dst > 1 => o as f64 * (src - 1) as f64 / (dst - 1) as f64,
                Alignment::Corners => 0.0,
            };
            let pos = pos.clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap { lo, hi, frac: pos - lo as f64 }
        })
        .collect()
}

/// Resizes every channel of `[h, w, c]` to `[out_h, out_w, c]`.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize, alignment: Alignment) -> Result<Tensor> {
    let (h, w, c) = image.hwc()?;
    if h < 2 || w < 2 || out_h == 0 || out_w == 0 {
        return Err(ScanError::shape(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    let ty = taps(h, out_h, alignment);
    let tx = taps(w, out_w, alignment);
    let src = image.data();
    let mut out = vec![0f32; out_h * out_w * c];
    par::for_each_chunk_mut(&mut out, out_w * c, |oy, row| {
        let Tap { lo: y0, hi: y1, frac: fy } = ty[oy];
        for (ox, t) in tx.iter().enumerate() {
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch] as f64;
                let top = at(y0, t.lo) * (1.0 - t.frac) + at(y0, t.hi) * t.frac;
                let bottom = at(y1, t.lo) * (1.0 - t.frac) + at(y1, t.hi) * t.frac;
                row[ox * c + ch] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    });
    Tensor::from_vec(&[out_h, out_w, c], out)
}

/// Resizes binary per-organ masks and re-binarizes at 0.5.
pub fn resize_masks(organs: &Tensor, out_h: usize, out_w: usize, alignment: Alignment) -> Result<Tensor> {
    let r = resize_bilinear(organs, out_h, out_w, alignment)?;
    Ok(r.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

/// Builds the 4-channel one-hot mask from binary foreground channels given
/// in class order (left lung, right lung, heart; heart may be absent).
/// Overlaps go to the earliest channel. Returns the mask and the number of
/// pixels where foregrounds overlapped.
pub fn one_hot_priority(organs: &Tensor) -> Result<(Tensor, usize)> {
    let (h, w, k) = organs.hwc()?;
    if k == 0 || k >= NUM_CLASSES {
        return Err(ScanError::shape(format!("expected 1..={} foreground channels, got {k}", NUM_CLASSES - 1)));
    }
    let mut out = Tensor::zeros(&[h, w, NUM_CLASSES]);
    let mut conflicts = 0;
    for (src, dst) in organs.data().chunks_exact(k).zip(out.data_mut().chunks_exact_mut(NUM_CLASSES)) {
        let mut set = src.iter().enumerate().filter(|(_, &v)| v >= 0.5).map(|(i, _)| i);
        match set.next() {
            Some(first) => {
                dst[first] = 1.0;
                if set.next().is_some() {
                    conflicts += 1;
                }
            }
            None => dst[BACKGROUND] = 1.0,
        }
    }
    Ok((out, conflicts))
}
