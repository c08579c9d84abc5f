use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};
use crate::NUM_CLASSES;

/// Binary grid for one class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
    pub class: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, class: usize) -> Self {
        Self { height, width, data: vec![false; height * width], class }
    }

    pub fn from_fn(height: usize, width: usize, class: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data, class }
    }

    pub fn from_vec(height: usize, width: usize, class: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(ScanError::shape(format!("{} values for a {height}x{width} mask", data.len())));
        }
        Ok(Self { height, width, data, class })
    }

    /// Pixels of channel `class` equal to one.
    pub fn from_channel<T: Scalar>(t: &Tensor<T>, class: usize) -> Result<Self> {
        let (h, w, c) = t.hwc()?;
        if class >= c {
            return Err(ScanError::shape(format!("channel {class} of {:?}", t.shape())));
        }
        let data = t.data().chunks_exact(c).map(|p| p[class] == T::one()).collect();
        Ok(Self { height: h, width: w, data, class })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(ScanError::shape(format!("mask {:?} vs {:?}", self.dims(), other.dims())));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect();
        Ok(BinaryMask { height: self.height, width: self.width, data, class: self.class })
    }
}

/// Per-pixel argmax; ties go to the lowest channel index.
pub fn argmax_labels<T: Scalar>(probs: &Tensor<T>) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w, c) = probs.hwc()?;
    if c == 0 || c > u8::MAX as usize {
        return Err(ScanError::shape(format!("cannot take argmax over {:?}", probs.shape())));
    }
    let labels = probs
        .data()
        .chunks_exact(c)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if p[k] > p[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok((h, w, labels))
}

/// One mask per class from `[H, W, 4]` probabilities.
pub fn argmax_mask<T: Scalar>(probs: &Tensor<T>) -> Result<Vec<BinaryMask>> {
    let (h, w, labels) = argmax_labels(probs)?;
    if probs.shape()[2] != NUM_CLASSES {
        return Err(ScanError::shape(format!("expected {NUM_CLASSES} channels, got {:?}", probs.shape())));
    }
    Ok((0..NUM_CLASSES)
        .map(|k| BinaryMask { height: h, width: w, data: labels.iter().map(|&l| l as usize == k).collect(), class: k })
        .collect())
}
