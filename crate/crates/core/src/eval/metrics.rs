use crate::error::{Result, ScanError};

use super::mask::BinaryMask;

/// Pixel counts of a prediction against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn of(pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        if pred.dims() != truth.dims() {
            return Err(ScanError::shape(format!("prediction {:?} vs ground truth {:?}", pred.dims(), truth.dims())));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.data().iter().zip(truth.data()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// `tp / (tp + fp + fn)`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 { 1.0 } else { self.tp as f64 / d as f64 }
    }

    /// `2 tp / (2 tp + fp + fn)`; 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 { 1.0 } else { 2.0 * self.tp as f64 / d as f64 }
    }
}

pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(Confusion::of(pred, truth)?.iou())
}

pub fn dice(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(Confusion::of(pred, truth)?.dice())
}
