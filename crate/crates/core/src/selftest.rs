//! Built-in consistency checks: finite-difference gradient checks for every
//! layer kind and the two training objectives, and a brute-force oracle for
//! the overlap metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::ImageSample;
use crate::error::Result;
use crate::eval::{dice, iou, BinaryMask};
use crate::model::spec::{LayerKind, LayerSpec, Widths};
use crate::model::{Batch, CriticNetwork, Network, SegmentorNetwork};
use crate::ops::{GradRequest, NormMode};
use crate::tensor::{Scalar, Tensor};
use crate::train::{binary_loss_logit, critic_objective, pixel_loss_from_logits, segmentor_objective};

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub probes: usize,
    /// Probes redrawn because the difference quotient straddled a ReLU kink.
    pub skipped: usize,
    /// Worst relative error (gradient checks) or mismatch count (oracles).
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<34} probes={:<6} worst={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.probes,
            self.worst,
            self.tolerance
        )?;
        if self.skipped > 0 {
            write!(f, " (skipped {} at kinks)", self.skipped)?;
        }
        Ok(())
    }
}

/// Relative error with an absolute floor on the denominator, so that a
/// gradient that is exactly zero (a bias feeding a train-mode batch norm)
/// is not judged against rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Above the cancellation noise of a central difference in f64.
pub const FLOOR_F64: f64 = 1e-4;
/// Above the accumulation noise of an f32 backward pass.
pub const FLOOR_F32: f64 = 1e-3;

fn floor<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 8 { FLOOR_F64 } else { FLOOR_F32 }
}

/// Difference quotients at `h` and `h/2` further apart than this mean the
/// probe crossed a ReLU kink; such a probe says nothing about the gradient.
const KINK_TOL: f64 = 2e-4;

/// Central difference along a probe, or `None` at a kink.
fn smooth_difference(f: impl Fn(f64) -> Result<f64>) -> Result<Option<f64>> {
    let quotient = |h: f64| -> Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let (full, half) = (quotient(FD_STEP)?, quotient(FD_STEP / 2.0)?);
    Ok((relative_error(full, half, FLOOR_F64) <= KINK_TOL).then_some(full))
}

/// Draws probes until `probes` smooth ones are checked (at most ten times as
/// many attempts) and returns the worst error and the number skipped.
fn sweep(probes: usize, mut attempt: impl FnMut(usize) -> Result<Option<f64>>) -> Result<(f64, usize)> {
    let (mut worst, mut done, mut skipped) = (0f64, 0, 0);
    let mut i = 0;
    while done < probes && i < 10 * probes {
        match attempt(i)? {
            Some(e) => {
                worst = worst.max(e);
                done += 1;
            }
            None => skipped += 1,
        }
        i += 1;
    }
    if done < probes {
        // too few differentiable probes to vouch for anything
        worst = f64::INFINITY;
    }
    Ok((worst, skipped))
}

/// Which coordinate a probe perturbs.
#[derive(Clone, Copy, Debug)]
enum Probe {
    Input { sample: usize, index: usize },
    Param { tensor: usize, index: usize },
}

fn gaussian_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    // rounded through f32 so the same values exist at both precisions
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal) as f32 as f64)
}

/// Keeps values away from the ReLU kink so central differences stay on
/// one side of it.
fn away_from_zero(t: &mut Tensor<f64>) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.05 } else { 0.05 };
        }
    }
}

/// Loss `sum_n <r_n, out_n>` with fixed random weights, or a head loss.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Head {
    Linear,
    Softmax,
    Sigmoid,
}

struct LayerCase {
    name: &'static str,
    specs: Vec<LayerSpec>,
    input_shape: [usize; 3],
    batch: usize,
    mode: NormMode,
    head: Head,
}

fn spec(kind: LayerKind, kernel: usize, cin: usize, cout: usize, stage: u32) -> LayerSpec {
    LayerSpec { kind, kernel, in_channels: cin, out_channels: cout, stage }
}

fn layer_cases() -> Vec<LayerCase> {
    use LayerKind::*;
    let case = |name, specs, input_shape, batch, mode, head| LayerCase { name, specs, input_shape, batch, mode, head };
    vec![
        case("conv2d 3x3", vec![spec(Conv, 3, 2, 3, 0)], [6, 5, 2], 2, NormMode::Train, Head::Linear),
        case("conv2d 7x7", vec![spec(Conv, 7, 1, 2, 0)], [8, 8, 1], 1, NormMode::Train, Head::Linear),
        case("conv2d 1x1", vec![spec(Conv, 1, 3, 2, 0)], [4, 4, 3], 2, NormMode::Train, Head::Linear),
        case("batch_norm train", vec![spec(Norm, 0, 3, 3, 0)], [4, 3, 3], 3, NormMode::Train, Head::Linear),
        case("batch_norm eval", vec![spec(Norm, 0, 3, 3, 0)], [4, 3, 3], 2, NormMode::Eval, Head::Linear),
        case("relu", vec![spec(Relu, 0, 2, 2, 0)], [4, 4, 2], 2, NormMode::Train, Head::Linear),
        case("avg_pool2", vec![spec(AvgPool, 2, 2, 2, 1)], [6, 4, 2], 2, NormMode::Train, Head::Linear),
        case("transposed_conv2d 2x2/2", vec![spec(TransposedConv, 2, 3, 2, 0)], [3, 4, 3], 2, NormMode::Train, Head::Linear),
        case("residual block", vec![spec(ResBlock, 3, 2, 2, 0)], [5, 5, 2], 3, NormMode::Train, Head::Linear),
        case(
            "global pool + dense + sigmoid",
            vec![spec(GlobalPool, 0, 3, 3, 0), spec(Dense, 0, 3, 1, 0), spec(Sigmoid, 0, 1, 1, 0)],
            [4, 4, 3],
            2,
            NormMode::Train,
            Head::Sigmoid,
        ),
        case(
            "conv + softmax cross-entropy",
            vec![spec(Conv, 3, 2, 4, 0), spec(Softmax, 0, 4, 4, 0)],
            [5, 4, 2],
            2,
            NormMode::Train,
            Head::Softmax,
        ),
    ]
}

struct Fixture {
    inputs: Batch<f64>,
    weights: Batch<f64>,
    labels: Batch<f64>,
}

fn case_loss<T: Scalar>(net: &Network<T>, case: &LayerCase, fx: &Fixture, x: &Batch<T>, grad: bool)
    -> Result<(f64, Option<(Batch<T>, Vec<Tensor<T>>)>)> {
    let (out, trace) = net.forward(x.clone(), case.mode)?;
    let mut loss = 0f64;
    let mut upstream = Vec::with_capacity(out.len());
    for (n, o) in out.iter().enumerate() {
        match case.head {
            Head::Linear => {
                let r: Tensor<T> = fx.weights[n].cast();
                loss += o.data().iter().zip(r.data()).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>();
                upstream.push(r);
            }
            Head::Softmax => {
                let (l, g) = pixel_loss_from_logits(o, &fx.labels[n].cast(), &[true; 4])?;
                loss += l;
                upstream.push(g);
            }
            Head::Sigmoid => {
                let (l, g) = binary_loss_logit(o.data()[0], (n % 2) as f64);
                loss += l;
                upstream.push(Tensor::full(&[1], g));
            }
        }
    }
    if !grad {
        return Ok((loss, None));
    }
    let back = net.backward(&trace, upstream, GradRequest::ALL)?;
    Ok((loss, Some((back.input.expect("requested"), back.params.expect("requested")))))
}

fn perturb<T: Scalar>(net: &mut Network<T>, x: &mut Batch<T>, p: Probe, delta: f64) {
    let bump = |v: &mut T| *v = T::from_f64(v.as_f64() + delta);
    match p {
        Probe::Input { sample, index } => bump(&mut x[sample].data_mut()[index]),
        Probe::Param { tensor, index } => bump(&mut net.params_mut()[tensor].data_mut()[index]),
    }
}

/// Alternates input and parameter coordinates.
fn pick_probe(net: &Network<f64>, x: &Batch<f64>, i: usize, rng: &mut ChaCha8Rng) -> Probe {
    let params = net.params();
    if params.is_empty() || i % 2 == 0 {
        let sample = rng.random_range(0..x.len());
        Probe::Input { sample, index: rng.random_range(0..x[sample].len()) }
    } else {
        let tensor = rng.random_range(0..params.len());
        Probe::Param { tensor, index: rng.random_range(0..params[tensor].len()) }
    }
}

const FD_STEP: f64 = 1e-6;


fn analytic_at<T: Scalar>(grads: &(Batch<T>, Vec<Tensor<T>>), p: Probe) -> f64 {
    match p {
        Probe::Input { sample, index } => grads.0[sample].data()[index].as_f64(),
        Probe::Param { tensor, index } => grads.1[tensor].data()[index].as_f64(),
    }
}

fn check_case<T: Scalar>(case: &LayerCase, probes: usize, seed: u64, tolerance: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::from_specs(case.specs.clone(), seed)?;
    // non-trivial running statistics and parameters
    for b in net.buffers_mut() {
        let len = b.len();
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = 0.5 + (i as f64 + 1.0) / (len as f64 + 1.0);
        }
    }
    for p in net.params_mut() {
        let noise = gaussian_tensor(p.shape(), &mut rng);
        for (v, n) in p.data_mut().iter_mut().zip(noise.data()) {
            *v = (*v + 0.3 * n) as f32 as f64;
        }
    }
    let [h, w, c] = case.input_shape;
    let mut inputs: Batch<f64> = (0..case.batch).map(|_| gaussian_tensor(&[h, w, c], &mut rng)).collect();
    if case.name == "relu" {
        inputs.iter_mut().for_each(away_from_zero);
    }
    let (out, _) = net.forward(inputs.clone(), case.mode)?;
    let weights = out.iter().map(|o| gaussian_tensor(o.shape(), &mut rng)).collect();
    let labels = out
        .iter()
        .map(|o| {
            let oc = *o.shape().last().expect("non-scalar output");
            let mut t = Tensor::zeros(o.shape());
            for px in t.data_mut().chunks_exact_mut(oc) {
                px[rng.random_range(0..oc)] = 1.0;
            }
            t
        })
        .collect();
    let fx = Fixture { inputs, weights, labels };

    let net_t: Network<T> = net.cast();
    let x_t: Batch<T> = fx.inputs.iter().map(|t| t.cast()).collect();
    let (_, grads) = case_loss(&net_t, case, &fx, &x_t, true)?;
    let grads = grads.expect("requested");
    let (worst, skipped) = sweep(probes, |i| {
        let p = pick_probe(&net, &fx.inputs, i, &mut rng);
        let numeric = smooth_difference(|delta| {
            let (mut n, mut x) = (net.clone(), fx.inputs.clone());
            perturb(&mut n, &mut x, p, delta);
            Ok(case_loss(&n, case, &fx, &x, false)?.0)
        })?;
        Ok(numeric.map(|d| relative_error(analytic_at(&grads, p), d, floor::<T>())))
    })?;
    Ok(CheckReport { name: format!("grad {} ({})", case.name, precision::<T>()), probes, skipped, worst, tolerance })
}

fn precision<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 8 { "f64" } else { "f32" }
}

/// Tolerances of the gradient checks: f64 analytic against f64 differences,
/// and f32 analytic against f64 differences at the same (f32-representable)
/// point.
pub const TOL_F64: f64 = 1e-3;
pub const TOL_F32: f64 = 1e-2;

/// Per-layer-kind gradient checks at both precisions.
pub fn layer_gradient_checks(probes: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (i, case) in layer_cases().iter().enumerate() {
        out.push(check_case::<f64>(case, probes, seed + i as u64, TOL_F64)?);
        out.push(check_case::<f32>(case, probes, seed + i as u64, TOL_F32)?);
    }
    Ok(out)
}

/// Narrow widths used by the end-to-end check so it stays fast.
pub const SMALL_WIDTHS: Widths =
    Widths { stem: 4, transitions: [4, 6, 6], deep_blocks: 1, bottleneck: 6, up: [4, 4, 4, 4], classes: 4 };

/// End-to-end check of both objectives on `size`x`size` synthetic inputs:
/// segmentor parameters and input through the critic, critic parameters.
pub fn objective_gradient_checks(size: usize, probes: usize, seed: u64, widths: &Widths) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seg = SegmentorNetwork::<f64>::with_widths(widths, seed)?;
    let critic = CriticNetwork::<f64>::with_widths(widths, seed + 1, true)?;
    let seg = seg.cast::<f32>().cast::<f64>();
    let critic = critic.cast::<f32>().cast::<f64>();
    let samples: Vec<ImageSample<f64>> =
        crate::data::synthetic::geometric_samples(2, seed, crate::data::synthetic::SyntheticConfig { size, ..Default::default() })
            .into_iter()
            .map(|s| s.cast())
            .collect();
    let batch: Vec<&ImageSample<f64>> = samples.iter().collect();
    let lambda = 0.5;
    let mut out = Vec::new();

    for prec in ["f64", "f32"] {
        let (tol, fl) = if prec == "f64" { (TOL_F64, FLOOR_F64) } else { (TOL_F32, FLOOR_F32) };
        let s_grads: Vec<f64> = if prec == "f64" {
            let pass = segmentor_objective(&seg, Some(&critic), &batch, lambda, NormMode::Train, true)?;
            pass.grads.expect("requested").iter().flat_map(|t| t.data().to_vec()).collect()
        } else {
            let (s32, c32) = (seg.cast::<f32>(), critic.cast::<f32>());
            let samples32: Vec<ImageSample<f32>> = samples.iter().map(|s| s.cast()).collect();
            let b32: Vec<&ImageSample<f32>> = samples32.iter().collect();
            let pass = segmentor_objective(&s32, Some(&c32), &b32, lambda, NormMode::Train, true)?;
            pass.grads.expect("requested").iter().flat_map(|t| t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>()).collect()
        };
        let d_grads: Vec<f64> = if prec == "f64" {
            let pass = critic_objective(&seg, &critic, &batch, NormMode::Train, NormMode::Train, true)?;
            pass.grads.expect("requested").iter().flat_map(|t| t.data().to_vec()).collect()
        } else {
            let (s32, c32) = (seg.cast::<f32>(), critic.cast::<f32>());
            let samples32: Vec<ImageSample<f32>> = samples.iter().map(|s| s.cast()).collect();
            let b32: Vec<&ImageSample<f32>> = samples32.iter().collect();
            let pass = critic_objective(&s32, &c32, &b32, NormMode::Train, NormMode::Train, true)?;
            pass.grads.expect("requested").iter().flat_map(|t| t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>()).collect()
        };

        let (worst_s, skipped_s) = sweep(probes, |_| {
            let k = rng.random_range(0..s_grads.len());
            let numeric = smooth_difference(|delta| {
                let mut s = seg.clone();
                set_flat(&mut s.net, k, delta);
                Ok(segmentor_objective(&s, Some(&critic), &batch, lambda, NormMode::Train, false)?.value)
            })?;
            Ok(numeric.map(|d| relative_error(s_grads[k], d, fl)))
        })?;
        let (worst_d, skipped_d) = sweep(probes, |_| {
            let k = rng.random_range(0..d_grads.len());
            let numeric = smooth_difference(|delta| {
                let mut d = critic.clone();
                set_flat(&mut d.net, k, delta);
                Ok(critic_objective(&seg, &d, &batch, NormMode::Train, NormMode::Train, false)?.value)
            })?;
            Ok(numeric.map(|g| relative_error(d_grads[k], g, fl)))
        })?;
        out.push(CheckReport { name: format!("grad segmentor objective {size}x{size} ({prec})"), probes, skipped: skipped_s, worst: worst_s, tolerance: tol });
        out.push(CheckReport { name: format!("grad critic objective {size}x{size} ({prec})"), probes, skipped: skipped_d, worst: worst_d, tolerance: tol });
    }
    Ok(out)
}

fn set_flat(net: &mut Network<f64>, mut k: usize, delta: f64) {
    for p in net.params_mut() {
        if k < p.len() {
            p.data_mut()[k] += delta;
            return;
        }
        k -= p.len();
    }
    panic!("flat parameter index out of range");
}

/// IoU and Dice against direct pixel counting on random masks, plus the
/// Dice-IoU identity.
pub fn metric_oracle(trials: usize, side: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..trials {
        let (pa, pb) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let a = BinaryMask::from_fn(side, side, 0, |_, _| rng.random_bool(pa));
        let b = BinaryMask::from_fn(side, side, 0, |_, _| rng.random_bool(pb));
        let (mut inter, mut uni, mut na, mut nb) = (0u32, 0u32, 0u32, 0u32);
        for (&x, &y) in a.data().iter().zip(b.data()) {
            inter += u32::from(x && y);
            uni += u32::from(x || y);
            na += u32::from(x);
            nb += u32::from(y);
        }
        let want_iou = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
        let want_dice = if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 };
        let (i, d) = (iou(&a, &b)?, dice(&a, &b)?);
        let identity = (d - 2.0 * i / (1.0 + i)).abs();
        if i != want_iou || d != want_dice || identity > 1e-9 || iou(&b, &a)? != i {
            mismatches += 1;
        }
    }
    Ok(CheckReport { name: format!("metric oracle {side}x{side}"), probes: trials, skipped: 0, worst: mismatches as f64, tolerance: 0.5 })
}

/// Everything `scan selftest` runs.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = layer_gradient_checks(20, seed)?;
    out.extend(objective_gradient_checks(64, 20, seed, &crate::model::spec::WIDTHS)?);
    out.push(metric_oracle(10_000, 16, seed)?);
    Ok(out)
}
