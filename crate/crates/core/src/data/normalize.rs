use crate::tensor::{Scalar, Tensor};

pub const NORM_EPS: f64 = 1e-8;

/// `(x - mean) / sqrt(var + eps)` with the population variance of the whole
/// image. Statistics are accumulated in f64.
pub fn normalize_per_image<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let n = image.len().max(1) as f64;
    let mean = image.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = image.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    image.map(|v| T::from_f64((v.as_f64() - mean) * inv))
}
