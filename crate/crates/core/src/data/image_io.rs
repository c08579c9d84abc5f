//! Grayscale image and mask files (PNG, GIF, anything `image` decodes).

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};

use crate::error::{Result, ScanError};
use crate::tensor::Tensor;

/// Decodes a grayscale file to `[h, w, 1]` with the stored integer values.
/// Colour files whose channels all agree (as GIF decoding produces) are
/// accepted; anything with real colour is rejected.
pub fn load_gray_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| ScanError::Image { path: path.to_path_buf(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| f32::from(p.0[0])).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| f32::from(p.0[0])).collect(),
        DynamicImage::ImageRgb8(b) => gray_from(b.pixels().map(|p| p.0), path)?,
        DynamicImage::ImageRgba8(b) => gray_from(b.pixels().map(|p| [p.0[0], p.0[1], p.0[2]]), path)?,
        DynamicImage::ImageRgb16(b) => gray_from(b.pixels().map(|p| p.0), path)?,
        DynamicImage::ImageRgba16(b) => gray_from(b.pixels().map(|p| [p.0[0], p.0[1], p.0[2]]), path)?,
        other => {
            return Err(ScanError::format(path, format!("unsupported pixel format {:?}", other.color())));
        }
    };
    Tensor::from_vec(&[h, w, 1], data)
}

fn gray_from<P: Copy + PartialEq + Into<f32>>(pixels: impl Iterator<Item = [P; 3]>, path: &Path) -> Result<Vec<f32>> {
    pixels
        .map(|[r, g, b]| {
            if r == g && g == b {
                Ok(r.into())
            } else {
                Err(ScanError::format(path, "image is not grayscale"))
            }
        })
        .collect()
}

/// Binarizes at half of the image maximum: `v > max / 2`. An all-zero
/// image stays all zero.
pub fn binarize(image: &Tensor) -> Tensor {
    let max = image.data().iter().copied().fold(0f32, f32::max);
    let half = max / 2.0;
    image.map(|v| if max > 0.0 && v > half { 1.0 } else { 0.0 })
}

pub fn load_mask(path: &Path) -> Result<Tensor> {
    Ok(binarize(&load_gray_image(path)?))
}

/// Writes an 8-bit grayscale PNG; values are clamped to `[0, 255]`.
pub fn save_gray_png(image: &Tensor, path: &Path) -> Result<()> {
    let (h, w, c) = image.hwc()?;
    if c != 1 {
        return Err(ScanError::shape(format!("expected one channel, got {:?}", image.shape())));
    }
    let raw = image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, raw).expect("sized");
    buf.save(path).map_err(|source| ScanError::Image { path: path.to_path_buf(), source })
}

/// Writes an RGB PNG from `[h, w, 3]` values in `[0, 255]`.
pub fn save_rgb_png(image: &Tensor, path: &Path) -> Result<()> {
    let (h, w, c) = image.hwc()?;
    if c != 3 {
        return Err(ScanError::shape(format!("expected three channels, got {:?}", image.shape())));
    }
    let raw = image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("sized");
    buf.save(path).map_err(|source| ScanError::Image { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_png_binarizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        GrayImage::from_raw(2, 2, vec![0, 255, 255, 0]).unwrap().save(&p).unwrap();
        assert_eq!(load_mask(&p).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
        GrayImage::from_raw(2, 2, vec![0; 4]).unwrap().save(&p).unwrap();
        assert!(load_mask(&p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sixteen_bit_values_kept() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.png");
        ImageBuffer::<Luma<u16>, _>::from_raw(3, 1, vec![0u16, 4095, 1234]).unwrap().save(&p).unwrap();
        let t = load_gray_image(&p).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1]);
        assert_eq!(t.data(), &[0.0, 4095.0, 1234.0]);
    }

    #[test]
    fn colour_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        image::RgbImage::from_raw(1, 1, vec![10, 20, 30]).unwrap().save(&p).unwrap();
        assert!(matches!(load_gray_image(&p), Err(ScanError::Format { .. })));
        image::RgbImage::from_raw(1, 1, vec![7, 7, 7]).unwrap().save(&p).unwrap();
        assert_eq!(load_gray_image(&p).unwrap().data(), &[7.0]);
    }

    #[test]
    fn gif_masks_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gif");
        image::RgbaImage::from_raw(2, 1, vec![0, 0, 0, 255, 255, 255, 255, 255]).unwrap().save(&p).unwrap();
        assert_eq!(load_mask(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn unreadable_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"nope").unwrap();
        assert!(load_gray_image(&p).is_err());
    }
}
