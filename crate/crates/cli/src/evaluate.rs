//! `scan eval`: scores a checkpoint on a split (or a whole dataset) and
//! times every prediction.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};

use scan_core::eval::{aggregate, predicted_masks, score_sample, write_overlay, EvalOptions};
use scan_core::ops::NormMode;

use crate::common::{load_samples, load_segmentor, Subset};
use crate::run::RunDir;
use crate::settings::Settings;

pub const TIMING_FILE: &str = "timing.kv";
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

pub fn run(settings: &Settings, checkpoint: &Path, subset: Subset, overlays: bool) -> Result<()> {
    let run = RunDir::create("eval", settings, vec![checkpoint.to_path_buf()])?;
    if settings.deterministic {
        scan_core::par::init_global_threads(1);
    }
    let segmentor = load_segmentor(checkpoint)?;
    let (_, samples) = load_samples(settings, subset)?;

    let overlay_dir = run.path.join("overlays");
    if overlays {
        std::fs::create_dir_all(&overlay_dir)?;
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut times = Vec::with_capacity(samples.len());
    for s in &samples {
        let t0 = Instant::now();
        let probs = segmentor.forward_segment(&s.image, NormMode::Eval)?;
        let masks = predicted_masks(&probs, settings.postprocess)?;
        times.push((s.id.clone(), t0.elapsed().as_secs_f64()));
        scores.push(score_sample(s, &masks)?);
        if overlays {
            let organs: Vec<_> = masks.iter().take(if s.heart_annotated { 3 } else { 2 }).collect();
            write_overlay(&s.image, &organs, &overlay_dir.join(format!("{}.png", s.id)))?;
        }
    }
    let options = EvalOptions { postprocess: settings.postprocess, resamples: BOOTSTRAP_RESAMPLES, seed: settings.train.seed };
    let report = aggregate(scores, &options)?;
    report.write(&run.path)?;

    let mean = times.iter().map(|(_, t)| t).sum::<f64>() / times.len() as f64;
    let max = times.iter().map(|(_, t)| *t).fold(0.0, f64::max);
    let mut timing = String::new();
    let _ = writeln!(timing, "images={}", times.len());
    let _ = writeln!(timing, "mean_seconds={mean:.4}");
    let _ = writeln!(timing, "max_seconds={max:.4}");
    let _ = writeln!(timing, "budget_seconds={}", settings.latency_budget_s);
    for (id, t) in &times {
        let _ = writeln!(timing, "sample.{id}.seconds={t:.4}");
    }
    std::fs::write(run.path.join(TIMING_FILE), timing)?;

    print!("{}", report.to_table());
    println!("{} images, mean prediction time {mean:.3} s (max {max:.3} s)", times.len());
    println!("report written to {}", run.path.display());
    if mean > settings.latency_budget_s {
        bail!("mean prediction time {mean:.3} s exceeds the budget of {} s", settings.latency_budget_s);
    }
    Ok(())
}
