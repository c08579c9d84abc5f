//! Pixel and critic losses.
//!
//! Loss values are accumulated in `f64`. Gradients are returned in the
//! tensor element type.

use crate::error::{Result, ScanError};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Probability clip used by [`binary_loss`] and [`pixel_loss`].
pub const PROB_CLIP: f64 = 1e-7;

/// Validates a one-hot label and returns the class index of every pixel.
pub fn label_classes<T: Scalar>(label: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, _, c) = label.hwc()?;
    label
        .data()
        .chunks_exact(c)
        .enumerate()
        .map(|(p, px)| {
            let mut hot = None;
            for (k, &v) in px.iter().enumerate() {
                if v == T::one() {
                    if hot.is_some() {
                        return Err(ScanError::Validation(format!("pixel {p} has several active classes")));
                    }
                    hot = Some(k);
                } else if v != T::zero() {
                    return Err(ScanError::Validation(format!("pixel {p} has non-binary label value {v}")));
                }
            }
            hot.ok_or_else(|| ScanError::Validation(format!("pixel {p} has no active class")))
        })
        .collect()
}

/// Mean multi-class cross-entropy of a probability map against a one-hot
/// label, with probabilities clipped to `[1e-7, 1 - 1e-7]`.
pub fn pixel_loss<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<f64> {
    if pred.shape() != label.shape() {
        return Err(ScanError::shape(format!("prediction {:?} vs label {:?}", pred.shape(), label.shape())));
    }
    let classes = label_classes(label)?;
    let c = pred.hwc()?.2;
    let total: f64 = classes
        .iter()
        .zip(pred.data().chunks_exact(c))
        .map(|(&k, px)| -px[k].as_f64().clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
        .sum();
    Ok(total / classes.len() as f64)
}

/// Pixel loss evaluated from logits in log-sum-exp form, restricted to the
/// `active` channels, and its gradient with respect to the logits.
///
/// Labels on inactive channels are not allowed; a heart-unannotated sample
/// simply never labels the heart channel.
pub fn pixel_loss_from_logits<T: Scalar>(
    logits: &Tensor<T>,
    label: &Tensor<T>,
    active: &[bool],
) -> Result<(f64, Tensor<T>)> {
    if logits.shape() != label.shape() {
        return Err(ScanError::shape(format!("logits {:?} vs label {:?}", logits.shape(), label.shape())));
    }
    let classes = label_classes(label)?;
    if let Some(p) = classes.iter().position(|&k| !active.get(k).copied().unwrap_or(false)) {
        return Err(ScanError::Validation(format!("pixel {p} is labeled with an inactive channel")));
    }
    let c = logits.hwc()?.2;
    let logp = ops::log_softmax_channels(logits, active)?;
    let n = classes.len() as f64;
    let inv_n = T::from_f64(1.0 / n);
    let mut total = 0f64;
    let mut grad = vec![T::zero(); logits.len()];
    for ((&k, lp), g) in classes.iter().zip(logp.data().chunks_exact(c)).zip(grad.chunks_exact_mut(c)) {
        total -= lp[k].as_f64();
        for ch in 0..c {
            if active[ch] {
                let p = lp[ch].exp();
                let y = if ch == k { T::one() } else { T::zero() };
                g[ch] = (p - y) * inv_n;
            }
        }
    }
    Ok((total / n, Tensor::from_vec(logits.shape(), grad)?))
}

/// Binary cross-entropy `-t ln p - (1 - t) ln(1 - p)` with `p` clipped.
pub fn binary_loss(prob: f64, target: f64) -> f64 {
    let p = prob.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// Binary loss of a critic logit and its derivative with respect to the
/// logit (`sigmoid(z) - t`).
pub fn binary_loss_logit<T: Scalar>(logit: T, target: f64) -> (f64, T) {
    let p = ops::sigmoid(logit);
    (binary_loss(p.as_f64(), target), p - T::from_f64(target))
}
