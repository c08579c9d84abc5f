//! The two players' objectives and their gradients.
//!
//! The segmentor minimizes `sum_i J_s(S(x_i), y_i) + lambda * J_d(D(S(x_i)), 1)`
//! (the non-saturating form of the adversarial term); the critic minimizes
//! `sum_i J_d(D(y_i), 1) + J_d(D(S(x_i)), 0)` with the segmentor held fixed.
//! In both, the critic sees one minibatch made of the ground-truth masks
//! followed by the predictions, so its batch statistics cover both.

use crate::data::ImageSample;
use crate::error::{Result, ScanError};
use crate::model::{CriticNetwork, SegmentorNetwork, Trace};
use crate::ops::{self, GradRequest, NormMode};
use crate::tensor::{Scalar, Tensor};

use super::loss::{binary_loss_logit, pixel_loss_from_logits};

/// Outcome of evaluating the segmentor objective.
pub struct SegmentorPass<T> {
    /// Objective value (sums over the minibatch).
    pub value: f64,
    /// `sum_i J_s`.
    pub pixel: f64,
    /// `sum_i J_d(D(x_i, S(x_i)), 1)`; zero when no critic is involved.
    pub adversarial: f64,
    /// Segmentor parameter gradients in parameter order.
    pub grads: Option<Vec<Tensor<T>>>,
    /// Trace of the segmentor forward pass (for running statistics).
    pub trace: Trace<T>,
}

pub struct CriticPass<T> {
    pub value: f64,
    /// Critic probabilities on the ground-truth masks.
    pub real_scores: Vec<f64>,
    /// Critic probabilities on the segmentor predictions.
    pub fake_scores: Vec<f64>,
    pub grads: Option<Vec<Tensor<T>>>,
    pub trace: Trace<T>,
}

fn check_batch<T: Scalar>(batch: &[&ImageSample<T>]) -> Result<()> {
    if batch.is_empty() {
        return Err(ScanError::Config("empty minibatch".into()));
    }
    Ok(())
}

/// Critic input for every sample: ground truth first, then predictions.
fn critic_inputs<T: Scalar>(
    critic: &CriticNetwork<T>,
    batch: &[&ImageSample<T>],
    predictions: &[Tensor<T>],
) -> Result<Vec<Tensor<T>>> {
    let image = |s: &ImageSample<T>| critic.includes_image().then(|| s.image.clone());
    let mut inputs = Vec::with_capacity(2 * batch.len());
    for s in batch {
        inputs.push(critic.compose_input(&s.mask, image(s).as_ref())?);
    }
    for (s, p) in batch.iter().zip(predictions) {
        inputs.push(critic.compose_input(p, image(s).as_ref())?);
    }
    Ok(inputs)
}

/// Segmentor objective with the critic frozen. Gradients flow through the
/// critic into the segmentor output but never into critic parameters.
pub fn segmentor_objective<T: Scalar>(
    segmentor: &SegmentorNetwork<T>,
    critic: Option<&CriticNetwork<T>>,
    batch: &[&ImageSample<T>],
    lambda: f64,
    mode: NormMode,
    want_grads: bool,
) -> Result<SegmentorPass<T>> {
    check_batch(batch)?;
    let images = batch.iter().map(|s| s.image.clone()).collect();
    let (logits, trace) = segmentor.forward_logits(images, mode)?;
    let mut pixel = 0f64;
    let mut grad_logits = Vec::with_capacity(batch.len());
    for (s, z) in batch.iter().zip(&logits) {
        let (l, g) = pixel_loss_from_logits(z, &s.mask, &s.active_channels())?;
        pixel += l;
        grad_logits.push(g);
    }

    let mut adversarial = 0f64;
    if let Some(critic) = critic.filter(|_| lambda > 0.0) {
        let probs: Vec<Tensor<T>> = batch
            .iter()
            .zip(&logits)
            .map(|(s, z)| ops::softmax_channels_masked(z, &s.active_channels()))
            .collect::<Result<_>>()?;
        let inputs = critic_inputs(critic, batch, &probs)?;
        let (z, dtrace) = critic.forward_logits(inputs, mode)?;
        let n = batch.len();
        let mut gz = vec![T::zero(); 2 * n];
        for i in 0..n {
            let (l, d) = binary_loss_logit(z[n + i], 1.0);
            adversarial += l;
            gz[n + i] = d * T::from_f64(lambda);
        }
        if want_grads {
            let back = critic.backward_logits(&dtrace, &gz, GradRequest { input: true, params: false })?;
            let gin = back.input.ok_or_else(|| ScanError::shape("critic produced no input gradient"))?;
            for i in 0..n {
                let g_mask = gin[n + i].slice_channels(0, crate::NUM_CLASSES)?;
                let g = ops::softmax_backward(&probs[i], &g_mask, &batch[i].active_channels())?;
                grad_logits[i].add_assign(&g)?;
            }
        }
    }

    let grads = if want_grads {
        segmentor.net.backward(&trace, grad_logits, GradRequest { input: false, params: true })?.params
    } else {
        None
    };
    Ok(SegmentorPass { value: pixel + lambda * adversarial, pixel, adversarial, grads, trace })
}

/// Critic objective with the segmentor frozen.
pub fn critic_objective<T: Scalar>(
    segmentor: &SegmentorNetwork<T>,
    critic: &CriticNetwork<T>,
    batch: &[&ImageSample<T>],
    segmentor_mode: NormMode,
    critic_mode: NormMode,
    want_grads: bool,
) -> Result<CriticPass<T>> {
    check_batch(batch)?;
    let images = batch.iter().map(|s| s.image.clone()).collect();
    let (logits, _) = segmentor.forward_logits(images, segmentor_mode)?;
    let probs: Vec<Tensor<T>> = batch
        .iter()
        .zip(&logits)
        .map(|(s, z)| ops::softmax_channels_masked(z, &s.active_channels()))
        .collect::<Result<_>>()?;
    let inputs = critic_inputs(critic, batch, &probs)?;
    let (z, trace) = critic.forward_logits(inputs, critic_mode)?;
    let n = batch.len();
    let mut value = 0f64;
    let mut gz = Vec::with_capacity(2 * n);
    for (i, &zi) in z.iter().enumerate() {
        let target = if i < n { 1.0 } else { 0.0 };
        let (l, d) = binary_loss_logit(zi, target);
        value += l;
        gz.push(d);
    }
    let scores: Vec<f64> = z.iter().map(|&v| ops::sigmoid(v).as_f64()).collect();
    let grads = if want_grads {
        critic.backward_logits(&trace, &gz, GradRequest { input: false, params: true })?.params
    } else {
        None
    };
    Ok(CriticPass {
        value,
        real_scores: scores[..n].to_vec(),
        fake_scores: scores[n..].to_vec(),
        grads,
        trace,
    })
}

/// Value of the joint minimax objective
/// `sum_i J_s - lambda * [J_d(D(y_i), 1) + J_d(D(S(x_i)), 0)]`.
pub fn minimax_value<T: Scalar>(
    segmentor: &SegmentorNetwork<T>,
    critic: &CriticNetwork<T>,
    batch: &[&ImageSample<T>],
    lambda: f64,
    mode: NormMode,
) -> Result<f64> {
    let s = segmentor_objective(segmentor, None, batch, 0.0, mode, false)?;
    let d = critic_objective(segmentor, critic, batch, mode, mode, false)?;
    Ok(s.pixel - lambda * d.value)
}
