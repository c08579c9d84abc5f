//! Acceptance gate. Every test prints one `PASS`/`FAIL` line and asserts the
//! same condition, so `cargo test --test acceptance -- --nocapture` reads as
//! a checklist. Tests that need the real radiograph datasets are marked
//! "extended" and ignored by default; run them with `--ignored` after
//! pointing `SCAN_MANIFEST` at a dataset manifest.
//!
//! Timed tests hold a process-wide lock while measuring so that they never
//! compete with each other for cores.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scan_core::data::synthetic::{geometric_samples, write_dataset, SyntheticConfig};
use scan_core::data::{
    assemble_samples, discover, load_gray_image, make_split, normalize_per_image, resize_bilinear, DatasetChoice,
    DatasetManifest, DatasetSplit, ImageSample, LoadOptions,
};
use scan_core::eval::{
    argmax_mask, dice, evaluate, fill_holes, iou, keep_largest, postprocess, BinaryMask, EvalOptions, MetricsReport,
    Row,
};
use scan_core::model::spec::{LayerKind, LayerSpec};
use scan_core::model::{Batch, CriticNetwork, Network, SegmentorNetwork};
use scan_core::ops::{GradRequest, NormMode};
use scan_core::train::{
    binary_loss, binary_loss_logit, critic_objective, pixel_loss_from_logits, segmentor_objective, LogRecord,
    TrainConfig, TrainMode, Trainer,
};
use scan_core::{Scalar, Tensor, BACKGROUND, HEART, NUM_CLASSES};

static TIMING: Mutex<()> = Mutex::new(());

fn timing_lock() -> MutexGuard<'static, ()> {
    TIMING.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: &str, pass: bool, detail: impl AsRef<str>) {
    let line = format!("{} {criterion}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    println!("{line}");
    assert!(pass, "{line}");
}

// ---------------------------------------------------------------------------
// Gradient suite

const FD_STEP: f64 = 1e-6;
const TOL_F64: f64 = 1e-3;
const TOL_F32: f64 = 1e-2;
const PROBES: usize = 20;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Gaussian values rounded through f32 so both precisions see the same point.
fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal) as f32 as f64)
}

fn round_to_f32(net: &Network<f64>) -> Network<f64> {
    net.cast::<f32>().cast::<f64>()
}

#[derive(Clone, Copy, PartialEq)]
enum Head {
    /// `sum <w, out>` with fixed random weights.
    Linear,
    /// Mean pixel cross-entropy over the channels marked active.
    CrossEntropy([bool; 4]),
    /// Binary cross-entropy of `sigmoid(out)` against alternating targets.
    Logistic,
}

struct Case {
    name: &'static str,
    specs: Vec<LayerSpec>,
    shape: [usize; 3],
    batch: usize,
    mode: NormMode,
    head: Head,
    /// Keep inputs at least this far from zero (ReLU kink).
    min_abs_input: f64,
}

fn spec(kind: LayerKind, kernel: usize, cin: usize, cout: usize, stage: u32) -> LayerSpec {
    LayerSpec { kind, kernel, in_channels: cin, out_channels: cout, stage }
}

fn cases() -> Vec<Case> {
    use LayerKind::*;
    let lin = |name, specs, shape, batch| Case {
        name,
        specs,
        shape,
        batch,
        mode: NormMode::Train,
        head: Head::Linear,
        min_abs_input: 0.0,
    };
    let heartless = [true, true, false, true];
    vec![
        lin("conv 3x3", vec![spec(Conv, 3, 3, 4, 0)], [7, 6, 3], 2),
        lin("conv 7x7", vec![spec(Conv, 7, 1, 3, 0)], [9, 8, 1], 2),
        lin("conv 1x1", vec![spec(Conv, 1, 4, 3, 0)], [5, 5, 4], 2),
        lin("transposed conv 2x2/2", vec![spec(TransposedConv, 2, 3, 2, 0)], [4, 3, 3], 2),
        lin("batch norm (train)", vec![spec(Norm, 0, 3, 3, 0)], [4, 4, 3], 3),
        Case { mode: NormMode::Eval, ..lin("batch norm (eval)", vec![spec(Norm, 0, 3, 3, 0)], [4, 4, 3], 2) },
        Case { min_abs_input: 0.05, ..lin("relu", vec![spec(Relu, 0, 2, 2, 0)], [5, 4, 2], 2) },
        lin("avg pool 2x2", vec![spec(AvgPool, 2, 3, 3, 1)], [6, 4, 3], 2),
        lin("residual block", vec![spec(ResBlock, 3, 3, 3, 0)], [5, 6, 3], 3),
        lin("global pool", vec![spec(GlobalPool, 0, 4, 4, 0)], [5, 3, 4], 2),
        lin("dense", vec![spec(GlobalPool, 0, 4, 4, 0), spec(Dense, 0, 4, 3, 0)], [3, 3, 4], 2),
        Case {
            head: Head::Logistic,
            ..lin("sigmoid + binary loss", vec![spec(GlobalPool, 0, 3, 3, 0), spec(Dense, 0, 3, 1, 0)], [4, 4, 3], 4)
        },
        Case {
            head: Head::CrossEntropy([true; 4]),
            ..lin("softmax + pixel loss", vec![spec(Conv, 3, 2, 4, 0)], [5, 4, 2], 2)
        },
        Case {
            head: Head::CrossEntropy(heartless),
            ..lin("masked softmax + pixel loss", vec![spec(Conv, 3, 2, 4, 0)], [5, 4, 2], 2)
        },
    ]
}

struct Fixture {
    weights: Vec<Tensor<f64>>,
    labels: Vec<Vec<usize>>,
}

/// Loss value computed directly in f64 from the network output.
fn oracle_loss(net: &Network<f64>, x: &Batch<f64>, case: &Case, fx: &Fixture) -> f64 {
    let (out, _) = net.forward(x.clone(), case.mode).unwrap();
    let mut total = 0.0;
    for (n, o) in out.iter().enumerate() {
        match case.head {
            Head::Linear => total += o.data().iter().zip(fx.weights[n].data()).map(|(a, b)| a * b).sum::<f64>(),
            Head::Logistic => {
                let t = (n % 2) as f64;
                let p = 1.0 / (1.0 + (-o.data()[0]).exp());
                total += -t * p.ln() - (1.0 - t) * (1.0 - p).ln();
            }
            Head::CrossEntropy(active) => {
                let px = o.data().chunks_exact(NUM_CLASSES);
                let mut ce = 0.0;
                for (z, &k) in px.zip(&fx.labels[n]) {
                    let lse = (0..NUM_CLASSES).filter(|&c| active[c]).map(|c| z[c].exp()).sum::<f64>().ln();
                    ce += lse - z[k];
                }
                total += ce / fx.labels[n].len() as f64;
            }
        }
    }
    total
}

/// Library gradients (input, params) at precision `T`.
fn library_grads<T: Scalar>(net: &Network<f64>, x: &Batch<f64>, case: &Case, fx: &Fixture) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>) {
    let net: Network<T> = net.cast();
    let x: Batch<T> = x.iter().map(|t| t.cast()).collect();
    let (out, trace) = net.forward(x, case.mode).unwrap();
    let mut upstream = Vec::new();
    for (n, o) in out.iter().enumerate() {
        upstream.push(match case.head {
            Head::Linear => fx.weights[n].cast(),
            Head::Logistic => Tensor::full(&[1], binary_loss_logit(o.data()[0], (n % 2) as f64).1),
            Head::CrossEntropy(active) => {
                let mut label = Tensor::<T>::zeros(o.shape());
                for (p, &k) in fx.labels[n].iter().enumerate() {
                    label.data_mut()[p * NUM_CLASSES + k] = T::one();
                }
                pixel_loss_from_logits(o, &label, &active).unwrap().1
            }
        });
    }
    let back = net.backward(&trace, upstream, GradRequest::ALL).unwrap();
    let up = |v: Vec<Tensor<T>>| v.iter().map(|t| t.cast()).collect();
    (up(back.input.unwrap()), up(back.params.unwrap()))
}

fn check_layer_case(case: &Case, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::from_specs(case.specs.clone(), seed).unwrap();
    for b in net.buffers_mut() {
        for v in b.data_mut() {
            *v = rng.random_range(0.5f32..1.5) as f64;
        }
    }
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = (*v + 0.3 * rng.sample::<f64, _>(StandardNormal)) as f32 as f64;
        }
    }
    let net = round_to_f32(&net);
    let [h, w, c] = case.shape;
    let mut x: Batch<f64> = (0..case.batch).map(|_| gaussian(&[h, w, c], &mut rng)).collect();
    for t in &mut x {
        for v in t.data_mut() {
            if v.abs() < case.min_abs_input {
                *v = case.min_abs_input.copysign(*v);
            }
        }
    }
    let (out, _) = net.forward(x.clone(), case.mode).unwrap();
    let fx = Fixture {
        weights: out.iter().map(|o| gaussian(o.shape(), &mut rng)).collect(),
        labels: out
            .iter()
            .map(|o| {
                let classes: Vec<usize> = match case.head {
                    Head::CrossEntropy(a) => (0..NUM_CLASSES).filter(|&k| a[k]).collect(),
                    _ => vec![0],
                };
                (0..o.len() / o.shape().last().unwrap()).map(|_| classes[rng.random_range(0..classes.len())]).collect()
            })
            .collect(),
    };
    let g64 = library_grads::<f64>(&net, &x, case, &fx);
    let g32 = library_grads::<f32>(&net, &x, case, &fx);
    let n_params = net.params().len();
    let (mut worst64, mut worst32) = (0f64, 0f64);
    for i in 0..PROBES {
        let on_param = n_params > 0 && i % 3 != 2;
        let (mut np, mut nm, mut xp, mut xm) = (net.clone(), net.clone(), x.clone(), x.clone());
        let (a64, a32) = if on_param {
            let t = rng.random_range(0..n_params);
            let k = rng.random_range(0..np.params()[t].len());
            np.params_mut()[t].data_mut()[k] += FD_STEP;
            nm.params_mut()[t].data_mut()[k] -= FD_STEP;
            (g64.1[t].data()[k], g32.1[t].data()[k])
        } else {
            let s = rng.random_range(0..x.len());
            let k = rng.random_range(0..x[s].len());
            xp[s].data_mut()[k] += FD_STEP;
            xm[s].data_mut()[k] -= FD_STEP;
            (g64.0[s].data()[k], g32.0[s].data()[k])
        };
        let numeric = (oracle_loss(&np, &xp, case, &fx) - oracle_loss(&nm, &xm, case, &fx)) / (2.0 * FD_STEP);
        worst64 = worst64.max(rel_err(a64, numeric));
        worst32 = worst32.max(rel_err(a32, numeric));
    }
    (worst64, worst32)
}

fn flat_param_count<T: Scalar>(net: &Network<T>) -> usize {
    net.params().iter().map(|p| p.len()).sum()
}

fn bump_flat(net: &mut Network<f64>, mut k: usize, delta: f64) {
    for p in net.params_mut() {
        if k < p.len() {
            p.data_mut()[k] += delta;
            return;
        }
        k -= p.len();
    }
    unreachable!("flat index out of range");
}

fn flat_grads<T: Scalar>(grads: &[Tensor<T>]) -> Vec<f64> {
    grads.iter().flat_map(|t| t.data().iter().map(|v| v.as_f64())).collect()
}

fn cast_samples<T: Scalar>(samples: &[ImageSample]) -> Vec<ImageSample<T>> {
    samples.iter().map(|s| s.cast()).collect()
}

/// End-to-end check of both objectives on the full-width networks.
fn check_end_to_end(size: usize, seed: u64) -> [(String, f64, f64); 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seg = SegmentorNetwork::<f64>::build(seed);
    let seg = SegmentorNetwork::from_network(round_to_f32(&seg.net)).unwrap();
    let critic = CriticNetwork::<f64>::build(seed + 1, false);
    let critic = CriticNetwork::from_network(round_to_f32(&critic.net)).unwrap();
    let mut data = geometric_samples(2, seed, SyntheticConfig { size, ..Default::default() });
    drop_heart(&mut data[1]);
    let lambda = 0.5;
    let (d64, d32) = (cast_samples::<f64>(&data), cast_samples::<f32>(&data));
    let (b64, b32): (Vec<_>, Vec<_>) = (d64.iter().collect(), d32.iter().collect());
    let (s32, c32) = (seg.cast::<f32>(), critic.cast::<f32>());

    let seg_g64 = flat_grads(&segmentor_objective(&seg, Some(&critic), &b64, lambda, NormMode::Train, true).unwrap().grads.unwrap());
    let seg_g32 = flat_grads(&segmentor_objective(&s32, Some(&c32), &b32, lambda, NormMode::Train, true).unwrap().grads.unwrap());
    let crit_g64 = flat_grads(&critic_objective(&seg, &critic, &b64, NormMode::Train, NormMode::Train, true).unwrap().grads.unwrap());
    let crit_g32 = flat_grads(&critic_objective(&s32, &c32, &b32, NormMode::Train, NormMode::Train, true).unwrap().grads.unwrap());

    let seg_value = |delta: f64, k: usize| {
        let mut s = seg.clone();
        bump_flat(&mut s.net, k, delta);
        segmentor_objective(&s, Some(&critic), &b64, lambda, NormMode::Train, false).unwrap().value
    };
    let crit_value = |delta: f64, k: usize| {
        let mut d = critic.clone();
        bump_flat(&mut d.net, k, delta);
        critic_objective(&seg, &d, &b64, NormMode::Train, NormMode::Train, false).unwrap().value
    };
    let mut out = [("segmentor objective".to_string(), 0f64, 0f64), ("critic objective".to_string(), 0f64, 0f64)];
    for _ in 0..PROBES {
        let k = rng.random_range(0..flat_param_count(&seg.net));
        let numeric = (seg_value(FD_STEP, k) - seg_value(-FD_STEP, k)) / (2.0 * FD_STEP);
        out[0].1 = out[0].1.max(rel_err(seg_g64[k], numeric));
        out[0].2 = out[0].2.max(rel_err(seg_g32[k], numeric));
        let k = rng.random_range(0..flat_param_count(&critic.net));
        let numeric = (crit_value(FD_STEP, k) - crit_value(-FD_STEP, k)) / (2.0 * FD_STEP);
        out[1].1 = out[1].1.max(rel_err(crit_g64[k], numeric));
        out[1].2 = out[1].2.max(rel_err(crit_g32[k], numeric));
    }
    out
}

/// Turns a sample into a heart-unannotated one: heart pixels become background.
fn drop_heart<T: Scalar>(s: &mut ImageSample<T>) {
    for px in s.mask.data_mut().chunks_exact_mut(NUM_CLASSES) {
        if px[HEART] == T::one() {
            px[HEART] = T::zero();
            px[NUM_CLASSES - 1] = T::one();
        }
    }
    s.heart_annotated = false;
}

#[test]
fn gradient_suite() {
    let _guard = timing_lock();
    let t0 = Instant::now();
    let mut all_ok = true;
    for (i, case) in cases().iter().enumerate() {
        let (w64, w32) = check_layer_case(case, 100 + i as u64);
        let ok = w64 < TOL_F64 && w32 < TOL_F32;
        all_ok &= ok;
        println!(
            "  {} {:<28} probes={PROBES} f64 worst={w64:.2e} (tol {TOL_F64:.0e})  f32 worst={w32:.2e} (tol {TOL_F32:.0e})",
            if ok { "ok  " } else { "BAD " },
            case.name
        );
    }
    for (name, w64, w32) in check_end_to_end(64, 7) {
        let ok = w64 < TOL_F64 && w32 < TOL_F32;
        all_ok &= ok;
        println!(
            "  {} {:<28} probes={PROBES} f64 worst={w64:.2e} (tol {TOL_F64:.0e})  f32 worst={w32:.2e} (tol {TOL_F32:.0e})",
            if ok { "ok  " } else { "BAD " },
            format!("{name} 64x64")
        );
    }
    let elapsed = t0.elapsed();
    verdict(
        "gradient suite",
        all_ok && elapsed < Duration::from_secs(300),
        format!("{} layer kinds + end-to-end 64x64, {:.1} s (limit 300 s)", cases().len(), elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------
// Parameter budgets

/// Learnable scalars of a schedule, counted from the layer shapes.
fn expected_params(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .map(|s| {
            let (k, i, o) = (s.kernel, s.in_channels, s.out_channels);
            let conv = |i: usize, o: usize| k * k * i * o + o;
            match s.kind {
                LayerKind::Conv | LayerKind::TransposedConv => conv(i, o),
                LayerKind::Norm => 2 * i,
                // norm, conv, norm, conv (+ 1x1 projection when widths differ)
                LayerKind::ResBlock => 2 * i + conv(i, o) + 2 * o + conv(o, o) + if i != o { i * o + o } else { 0 },
                LayerKind::Dense => i * o + o,
                _ => 0,
            }
        })
        .sum()
}

#[test]
fn parameter_budgets() {
    let seg = SegmentorNetwork::<f32>::build(0);
    let critic = CriticNetwork::<f32>::build(1, false);
    let critic5 = CriticNetwork::<f32>::build(1, true);
    let (s, d, d5) = (seg.param_count(), critic.param_count(), critic5.param_count());
    let within = |n: usize, target: f64| (n as f64 - target).abs() <= 0.1 * target;
    let consistent = s == flat_param_count(&seg.net)
        && s == expected_params(seg.net.specs())
        && d == flat_param_count(&critic.net)
        && d == expected_params(critic.net.specs())
        && d5 == expected_params(critic5.net.specs());
    verdict(
        "parameter budgets",
        within(s, 271_000.0) && within(d, 258_000.0) && consistent && seg.conv_layer_count() == 20,
        format!(
            "segmentor {s} ({:+.1}% vs 271k, {} conv layers), critic {d} ({:+.1}% vs 258k; {d5} with the image channel)",
            100.0 * (s as f64 / 271_000.0 - 1.0),
            seg.conv_layer_count(),
            100.0 * (d as f64 / 258_000.0 - 1.0)
        ),
    );
}

// ---------------------------------------------------------------------------
// Metric oracle

#[test]
fn metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut mismatches, mut worst_identity) = (0usize, 0f64);
    for _ in 0..10_000 {
        let (pa, pb) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let a: Vec<bool> = (0..256).map(|_| rng.random_bool(pa)).collect();
        let b: Vec<bool> = (0..256).map(|_| rng.random_bool(pb)).collect();
        let (mut inter, mut union, mut na, mut nb) = (0, 0, 0, 0);
        for (&x, &y) in a.iter().zip(&b) {
            inter += (x && y) as u32;
            union += (x || y) as u32;
            na += x as u32;
            nb += y as u32;
        }
        let want_iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let want_dice = if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 };
        let ma = BinaryMask::from_vec(16, 16, 0, a).unwrap();
        let mb = BinaryMask::from_vec(16, 16, 0, b).unwrap();
        let (i, d) = (iou(&ma, &mb).unwrap(), dice(&ma, &mb).unwrap());
        if i != want_iou || d != want_dice || iou(&mb, &ma).unwrap() != i || dice(&mb, &ma).unwrap() != d {
            mismatches += 1;
        }
        worst_identity = worst_identity.max((d - 2.0 * i / (1.0 + i)).abs());
    }
    verdict(
        "metric oracle",
        mismatches == 0 && worst_identity <= 1e-9,
        format!("10000 random 16x16 pairs, {mismatches} mismatches, Dice-IoU identity error {worst_identity:.1e} (limit 1e-9)"),
    );
}

// ---------------------------------------------------------------------------
// Objective reductions

fn oracle_pixel_loss(logits: &Tensor<f64>, sample: &ImageSample<f64>) -> f64 {
    let active = [true, true, sample.heart_annotated, true];
    let mut total = 0.0;
    let px = logits.data().chunks_exact(NUM_CLASSES).zip(sample.mask.data().chunks_exact(NUM_CLASSES));
    for (z, y) in px {
        let lse = (0..NUM_CLASSES).filter(|&c| active[c]).map(|c| z[c].exp()).sum::<f64>().ln();
        let k = y.iter().position(|&v| v == 1.0).unwrap();
        total += lse - z[k];
    }
    total / (logits.len() / NUM_CLASSES) as f64
}

fn oracle_bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
}

#[test]
fn objective_reductions() {
    let mut data = geometric_samples(3, 11, SyntheticConfig { size: 32, ..Default::default() });
    drop_heart(&mut data[2]);
    let data = cast_samples::<f64>(&data);
    let batch: Vec<&ImageSample<f64>> = data.iter().collect();
    let seg = SegmentorNetwork::<f64>::build(3);
    let critic = CriticNetwork::<f64>::build(4, false);

    // segmentor objective with lambda = 0 against the per-sample pixel losses
    let (logits, _) = seg.forward_logits(data.iter().map(|s| s.image.clone()).collect(), NormMode::Train).unwrap();
    let want_s: f64 = logits.iter().zip(&data).map(|(z, s)| oracle_pixel_loss(z, s)).sum();
    let got_s = segmentor_objective(&seg, Some(&critic), &batch, 0.0, NormMode::Train, false).unwrap().value;
    let err_s = (got_s - want_s).abs();

    // critic objective against binary losses of the critic's own outputs
    let probs: Vec<Tensor<f64>> = logits
        .iter()
        .zip(&data)
        .map(|(z, s)| {
            let mut p = z.clone();
            for px in p.data_mut().chunks_exact_mut(NUM_CLASSES) {
                let active = [true, true, s.heart_annotated, true];
                let m = (0..NUM_CLASSES).filter(|&c| active[c]).map(|c| px[c]).fold(f64::MIN, f64::max);
                let e: Vec<f64> = (0..NUM_CLASSES).map(|c| if active[c] { (px[c] - m).exp() } else { 0.0 }).collect();
                let sum: f64 = e.iter().sum();
                for c in 0..NUM_CLASSES {
                    px[c] = e[c] / sum;
                }
            }
            p
        })
        .collect();
    let inputs: Batch<f64> = data.iter().map(|s| s.mask.clone()).chain(probs).collect();
    let (z, _) = critic.net.forward(inputs, NormMode::Train).unwrap();
    let n = data.len();
    let want_d: f64 = z
        .iter()
        .enumerate()
        .map(|(i, zi)| oracle_bce(1.0 / (1.0 + (-zi.data()[0]).exp()), if i < n { 1.0 } else { 0.0 }))
        .sum();
    let pass = critic_objective(&seg, &critic, &batch, NormMode::Train, NormMode::Train, false).unwrap();
    let lib_terms: f64 = pass.real_scores.iter().map(|&p| binary_loss(p, 1.0)).sum::<f64>()
        + pass.fake_scores.iter().map(|&p| binary_loss(p, 0.0)).sum::<f64>();
    let err_d = (pass.value - want_d).abs().max((pass.value - lib_terms).abs());

    // non-saturating substitution: slopes of -ln t and ln(1 - t) at t = 0.01
    let t = 0.01;
    let h = 1e-7;
    let slope_ns = (binary_loss(t + h, 1.0) - binary_loss(t - h, 1.0)) / (2.0 * h);
    let slope_sat = (-binary_loss(t + h, 0.0) + binary_loss(t - h, 0.0)) / (2.0 * h);
    let ratio = slope_ns.abs() / slope_sat.abs();
    let want_ratio = (1.0 / t) / (1.0 / (1.0 - t));
    let ratio_err = (ratio / want_ratio - 1.0).abs();

    verdict(
        "objective reductions",
        err_s <= 1e-6 && err_d <= 1e-6 && ratio_err <= 0.01,
        format!(
            "|S(lambda=0) - sum J_s| = {err_s:.1e}, |D - sum J_d| = {err_d:.1e} (limit 1e-6); gradient ratio {ratio:.3} vs {want_ratio:.3} ({:.2}% off, limit 1%)",
            100.0 * ratio_err
        ),
    );
}

// ---------------------------------------------------------------------------
// Overfit smoke test

/// Argmax IoU per annotated organ class (background excluded).
fn organ_ious(seg: &SegmentorNetwork, s: &ImageSample) -> Vec<f64> {
    let probs = seg.forward_segment(&s.image, NormMode::Eval).unwrap();
    let pred = argmax_mask(&probs).unwrap();
    (0..BACKGROUND)
        .filter(|&k| k != HEART || s.heart_annotated)
        .map(|k| iou(&pred[k], &BinaryMask::from_channel(&s.mask, k).unwrap()).unwrap())
        .collect()
}

#[test]
fn overfit_smoke() {
    let data = geometric_samples(2, 5, SyntheticConfig { size: 128, ..Default::default() });
    let config = TrainConfig {
        mode: TrainMode::FcnOnly,
        lr: 0.003,
        epochs: 500,
        pretrain_epochs: 500,
        batch_size: 2,
        checkpoint_every: 500,
        ..Default::default()
    };
    let _guard = timing_lock();
    let t0 = Instant::now();
    let mut trainer = Trainer::new(config).unwrap();
    let outcome = trainer.run(&data).unwrap();
    let last_pixel = outcome.last_epoch_pixel.unwrap();
    let ious: Vec<Vec<f64>> = data.iter().map(|s| organ_ious(trainer.segmentor(), s)).collect();
    let per_sample = ious.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).fold(1.0, f64::min);
    let worst_class = ious.iter().flatten().copied().fold(1.0, f64::min);
    let elapsed = t0.elapsed();
    verdict(
        "overfit smoke test",
        outcome.steps == 500 && last_pixel < 0.05 && per_sample > 0.95 && elapsed < Duration::from_secs(180),
        format!(
            "2 samples at 128x128, {} steps: J_s {last_pixel:.4} (limit 0.05), lowest per-sample organ IoU {per_sample:.3} (limit 0.95; worst single organ {worst_class:.3}), {:.0} s (limit 180 s)",
            outcome.steps,
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Adversarial mechanics

const MECH_SIZE: usize = 32;
const MECH_EPOCHS: usize = 50;
const MECH_PRETRAIN: usize = 10;
const MECH_BATCH: usize = 10;
const MECH_LR: f64 = 0.001;
const MECH_LAMBDA: f64 = 0.001;
/// Paired runs per mode; single pairs are dominated by run-to-run chaos.
const MECH_SEEDS: u64 = 3;

fn mech_config(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        lambda: MECH_LAMBDA,
        lr: MECH_LR,
        epochs: MECH_EPOCHS,
        pretrain_epochs: MECH_PRETRAIN,
        batch_size: MECH_BATCH,
        checkpoint_every: MECH_EPOCHS,
        ..Default::default()
    }
}

fn mean_critic_score(critic: &CriticNetwork, samples: &[ImageSample], masks: &[Tensor]) -> f64 {
    let total: f64 = samples
        .iter()
        .zip(masks)
        .map(|(s, m)| {
            let image = critic.includes_image().then_some(&s.image);
            critic.forward_critic(m, image).unwrap().as_f64()
        })
        .sum();
    total / samples.len() as f64
}

/// Held-out both-lungs IoU under the default evaluation protocol.
fn both_lungs_iou(seg: &SegmentorNetwork, test: &[ImageSample]) -> f64 {
    let report = evaluate(seg, test, &EvalOptions { resamples: 10, ..Default::default() }).unwrap();
    report.row(Row::BothLungs).unwrap().iou
}

struct MechPair {
    finite: bool,
    completed: bool,
    equal_steps: bool,
    real: f64,
    fake: f64,
    iou_scan: f64,
    iou_fcn: f64,
}

fn mech_pair(seed: u64) -> MechPair {
    let cfg = SyntheticConfig { size: MECH_SIZE, ..Default::default() };
    let train = geometric_samples(20, 100 + seed, cfg);
    let test = geometric_samples(10, 200 + seed, cfg);

    let mut fcn = Trainer::new(mech_config(TrainMode::FcnOnly, seed)).unwrap();
    fcn.run(&train).unwrap();

    let mut scan = Trainer::new(mech_config(TrainMode::Scan, seed)).unwrap();
    // one adversarial epoch in: the predictions the critic learned to reject
    scan.run_until(&train, MECH_PRETRAIN + 1).unwrap();
    let early: Vec<Tensor> = train.iter().map(|s| scan.segmentor().forward_segment(&s.image, NormMode::Eval).unwrap()).collect();
    let scan_out = scan.run(&train).unwrap();

    let finite = scan.log().records().iter().all(|r| match r {
        LogRecord::Step { pixel, adversarial, critic, .. } => {
            [pixel, adversarial, critic].iter().all(|v| v.map_or(true, f64::is_finite))
        }
        LogRecord::Diagnostic { .. } => false,
        LogRecord::Epoch { .. } => true,
    });
    let critic = scan.critic().unwrap();
    let truth: Vec<Tensor> = train.iter().map(|s| s.mask.clone()).collect();
    let s_steps = |t: &Trainer| t.log().records().iter().filter(|r| matches!(r, LogRecord::Step { pixel: Some(_), .. })).count();
    MechPair {
        finite,
        completed: scan_out.epochs_completed == MECH_EPOCHS,
        equal_steps: s_steps(&scan) == s_steps(&fcn),
        real: mean_critic_score(critic, &train, &truth),
        fake: mean_critic_score(critic, &train, &early),
        iou_scan: both_lungs_iou(scan.segmentor(), &test),
        iou_fcn: both_lungs_iou(fcn.segmentor(), &test),
    }
}

#[test]
fn adversarial_mechanics() {
    let _guard = timing_lock();
    let pairs: Vec<MechPair> = (0..MECH_SEEDS).map(mech_pair).collect();
    let n = pairs.len() as f64;
    let mean_scan = pairs.iter().map(|p| p.iou_scan).sum::<f64>() / n;
    let mean_fcn = pairs.iter().map(|p| p.iou_fcn).sum::<f64>() / n;
    let detail: Vec<String> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| format!("seed {i}: critic truth {:.3} vs early {:.3}, IoU SCAN {:.4} FCN {:.4}", p.real, p.fake, p.iou_scan, p.iou_fcn))
        .collect();
    verdict(
        "adversarial mechanics",
        pairs.iter().all(|p| p.finite && p.completed && p.equal_steps && p.real > p.fake) && mean_scan >= mean_fcn,
        format!(
            "{MECH_EPOCHS} epochs, {MECH_SEEDS} paired seeds; mean held-out both-lungs IoU SCAN {mean_scan:.4} vs FCN {mean_fcn:.4}; {}",
            detail.join("; ")
        ),
    );
}

// ---------------------------------------------------------------------------
// Post-processing and pipeline determinism

fn disk(n: usize, cy: f64, cx: f64, r: f64) -> impl Fn(usize, usize) -> bool {
    move |y, x| {
        let _ = n;
        ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() <= r
    }
}

/// Runs prepare → train → evaluate on an on-disk synthetic dataset and
/// returns the report files.
fn pipeline_run(root: &Path) -> (Vec<u8>, Vec<u8>) {
    let data_dir = root.join("data");
    let cfg = SyntheticConfig { size: 32, ..Default::default() };
    let manifest = write_dataset(&data_dir, "toy", 12, 3, cfg, true).unwrap();
    let manifest = DatasetManifest::load(&data_dir.join("manifest.toml")).map(|m| {
        assert_eq!(m, manifest);
        m
    }).unwrap();
    let sources = manifest.select(DatasetChoice::Combined).unwrap();
    let ids: Vec<String> = discover(&manifest, sources[0]).unwrap().into_iter().map(|f| f.id).collect();
    let split = make_split("toy", &ids, 0, 8).unwrap();
    let split_path = root.join("split.json");
    split.save(&split_path).unwrap();
    let split = DatasetSplit::load(&split_path).unwrap();
    let (dev, _) = assemble_samples(&manifest, &sources, &split.development, LoadOptions::default()).unwrap();
    let (eval, _) = assemble_samples(&manifest, &sources, &split.evaluation, LoadOptions::default()).unwrap();
    let config = TrainConfig { epochs: 3, pretrain_epochs: 1, batch_size: 4, lr: 0.001, checkpoint_every: 3, ..Default::default() };
    let mut trainer = Trainer::new(config).unwrap().with_session(&root.join("run")).unwrap();
    trainer.run(&dev).unwrap();
    let report: MetricsReport = evaluate(trainer.segmentor(), &eval, &EvalOptions::default()).unwrap();
    let out = root.join("report");
    report.write(&out).unwrap();
    (std::fs::read(out.join("metrics.txt")).unwrap(), std::fs::read(out.join("metrics.kv")).unwrap())
}

#[test]
fn post_processing() {
    // donut: ring around an enclosed hole fills to a solid disk
    let ring = BinaryMask::from_fn(21, 21, 0, |y, x| disk(21, 10.0, 10.0, 8.0)(y, x) && !disk(21, 10.0, 10.0, 4.0)(y, x));
    let solid = BinaryMask::from_fn(21, 21, 0, disk(21, 10.0, 10.0, 8.0));
    let donut_ok = fill_holes(&ring) == solid && postprocess(&ring) == solid;

    // two blobs: 100-pixel square and 3-pixel bar; only the square survives
    let square = |y: usize, x: usize| (2..12).contains(&y) && (2..12).contains(&x);
    let bar = |y: usize, x: usize| y == 18 && (15..18).contains(&x);
    let two = BinaryMask::from_fn(20, 20, 0, |y, x| square(y, x) || bar(y, x));
    let kept = keep_largest(&two);
    let blobs_ok = kept == BinaryMask::from_fn(20, 20, 0, square) && kept.count() == 100;

    // idempotence on random masks
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut idem_failures = 0;
    for _ in 0..500 {
        let p = rng.random_range(0.2..0.8);
        let m = BinaryMask::from_fn(16, 16, 0, |_, _| rng.random_bool(p));
        let (f, k, pp) = (fill_holes(&m), keep_largest(&m), postprocess(&m));
        if fill_holes(&f) != f || keep_largest(&k) != k || postprocess(&pp) != pp {
            idem_failures += 1;
        }
    }

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ta, ka) = pipeline_run(a.path());
    let (tb, kb) = pipeline_run(b.path());
    let identical = ta == tb && ka == kb && !ta.is_empty();

    verdict(
        "post-processing",
        donut_ok && blobs_ok && idem_failures == 0 && identical,
        format!(
            "donut filled={donut_ok}, small blob removed={blobs_ok}, idempotence failures {idem_failures}/500, \
             two pipeline runs byte-identical={identical}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Latency

#[test]
fn prediction_latency() {
    let seg = SegmentorNetwork::<f32>::build(0);
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let paths: Vec<PathBuf> = (0..3)
        .map(|i| {
            let p = dir.path().join(format!("cxr_{i}.png"));
            let img = image::GrayImage::from_fn(512, 512, |_, _| image::Luma([rng.random::<u8>()]));
            img.save(&p).unwrap();
            p
        })
        .collect();
    let _guard = timing_lock();
    let t0 = Instant::now();
    for p in &paths {
        let raw = load_gray_image(p).unwrap();
        let x = normalize_per_image(&resize_bilinear(&raw, 400, 400, Default::default()).unwrap());
        let probs = seg.forward_segment(&x, NormMode::Eval).unwrap();
        let masks: Vec<BinaryMask> = argmax_mask(&probs).unwrap().iter().map(postprocess).collect();
        assert_eq!(masks.len(), NUM_CLASSES);
    }
    let mean = t0.elapsed().as_secs_f64() / paths.len() as f64;
    verdict(
        "latency",
        mean <= 5.0,
        format!("mean load + resize + predict + post-process wall time {mean:.2} s per 400x400 image (limit 5 s)"),
    );
}

// ---------------------------------------------------------------------------
// Extended: real datasets

const MANIFEST_ENV: &str = "SCAN_MANIFEST";

fn real_manifest() -> DatasetManifest {
    let path = std::env::var_os(MANIFEST_ENV)
        .unwrap_or_else(|| panic!("extended tests need {MANIFEST_ENV} pointing at a dataset manifest"));
    DatasetManifest::load(Path::new(&path)).unwrap()
}

fn real_split(manifest: &DatasetManifest, choice: DatasetChoice, dev: usize) -> (Vec<ImageSample>, Vec<ImageSample>) {
    let sources = manifest.select(choice).unwrap();
    let ids: Vec<String> = sources.iter().flat_map(|s| discover(manifest, s).unwrap()).map(|f| f.id).collect();
    let split = make_split(choice.name(), &ids, 0, dev).unwrap();
    let load = |ids: &[String]| assemble_samples(manifest, &sources, ids, LoadOptions::default()).unwrap().0;
    (load(&split.development), load(&split.evaluation))
}

fn full_run(mode: TrainMode, train: &[ImageSample]) -> SegmentorNetwork {
    let mut t = Trainer::new(TrainConfig { mode, ..Default::default() }).unwrap();
    t.run(train).unwrap();
    t.into_parts().0
}

#[test]
#[ignore = "extended: needs JSRT"]
fn extended_jsrt_split_sizes() {
    let m = real_manifest();
    let sources = m.select(DatasetChoice::Jsrt).unwrap();
    let ids: Vec<String> = discover(&m, sources[0]).unwrap().into_iter().map(|f| f.id).collect();
    let split = make_split("jsrt", &ids, 0, 209).unwrap();
    let (d, e) = (split.development.len(), split.evaluation.len());
    verdict("extended JSRT split", d == 209 && e == 38, format!("{d}/{e} (expected 209/38)"));
}

#[test]
#[ignore = "extended: needs JSRT, hours of CPU"]
fn extended_jsrt_fcn_and_scan() {
    let m = real_manifest();
    let (dev, eval) = real_split(&m, DatasetChoice::Jsrt, 209);
    let fcn = both_lungs_iou(&full_run(TrainMode::FcnOnly, &dev), &eval);
    let scan = both_lungs_iou(&full_run(TrainMode::Scan, &dev), &eval);
    verdict(
        "extended JSRT FCN / SCAN",
        (fcn - 0.929).abs() <= 0.02 && scan > fcn,
        format!("FCN both-lungs IoU {:.1}% (target 92.9 +- 2), SCAN {:.1}%", 100.0 * fcn, 100.0 * scan),
    );
}

#[test]
#[ignore = "extended: needs JSRT and Montgomery, hours of CPU"]
fn extended_cross_dataset() {
    let m = real_manifest();
    let load = |choice| {
        let sources = m.select(choice).unwrap();
        let ids: Vec<String> = discover(&m, sources[0]).unwrap().into_iter().map(|f| f.id).collect();
        assemble_samples(&m, &sources, &ids, LoadOptions::default()).unwrap().0
    };
    let (jsrt, montgomery) = (load(DatasetChoice::Jsrt), load(DatasetChoice::Montgomery));
    let fcn = both_lungs_iou(&full_run(TrainMode::FcnOnly, &jsrt), &montgomery);
    let scan = both_lungs_iou(&full_run(TrainMode::Scan, &jsrt), &montgomery);
    verdict(
        "extended cross-dataset",
        montgomery.len() == 138 && scan > fcn,
        format!("{} Montgomery images; both-lungs IoU SCAN {:.1}% vs FCN {:.1}%", montgomery.len(), 100.0 * scan, 100.0 * fcn),
    );
}
