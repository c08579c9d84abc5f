//! `scan predict`: masks (and optional contour overlays) for arbitrary
//! radiographs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use scan_core::data::{load_gray_image, load_jsrt_image, normalize_per_image, resize_bilinear, save_gray_png, Alignment};
use scan_core::eval::{predicted_masks, write_overlay};
use scan_core::model::SegmentorNetwork;
use scan_core::ops::NormMode;
use scan_core::{Tensor, BACKGROUND, CLASS_NAMES};

use crate::common::load_segmentor;
use crate::run::RunDir;
use crate::settings::Settings;

/// Raw JSRT files are recognized by extension; everything else goes
/// through the generic image decoder.
fn load_any(path: &Path) -> scan_core::Result<Tensor> {
    let is_raw = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("img"));
    if is_raw {
        load_jsrt_image(path)
    } else {
        load_gray_image(path)
    }
}

fn predict_one(
    segmentor: &SegmentorNetwork,
    path: &Path,
    out: &Path,
    resolution: usize,
    settings: &Settings,
    overlay: bool,
) -> Result<()> {
    let raw = load_any(path)?;
    let x = normalize_per_image(&resize_bilinear(&raw, resolution, resolution, Alignment::default())?);
    let probs = segmentor.forward_segment(&x, NormMode::Eval)?;
    let masks = predicted_masks(&probs, settings.postprocess)?;
    let stem = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    for (k, m) in masks.iter().enumerate().filter(|(k, _)| *k != BACKGROUND) {
        let data = m.data().iter().map(|&v| if v { 255.0 } else { 0.0 }).collect();
        let img = Tensor::from_vec(&[resolution, resolution, 1], data)?;
        save_gray_png(&img, &out.join(format!("{stem}_{}.png", CLASS_NAMES[k])))?;
    }
    if overlay {
        let organs: Vec<_> = masks.iter().take(BACKGROUND).collect();
        write_overlay(&x, &organs, &out.join(format!("{stem}_overlay.png")))?;
    }
    Ok(())
}

pub fn run(settings: &Settings, checkpoint: &Path, images: &[PathBuf], resolution: usize, overlay: bool) -> Result<()> {
    if images.is_empty() {
        bail!("no input images given");
    }
    scan_core::model::check_resolution(resolution, resolution)?;
    let mut inputs = vec![checkpoint.to_path_buf()];
    inputs.extend(images.iter().cloned());
    let run = RunDir::create("predict", settings, inputs)?;
    if settings.deterministic {
        scan_core::par::init_global_threads(1);
    }
    let segmentor = load_segmentor(checkpoint)?;
    let mut failed = 0;
    for path in images {
        match predict_one(&segmentor, path, &run.path, resolution, settings, overlay)
            .with_context(|| format!("predicting {}", path.display()))
        {
            Ok(()) => println!("{}: done", path.display()),
            Err(e) => {
                failed += 1;
                eprintln!("error: {e:#}");
            }
        }
    }
    println!("masks written to {}", run.path.display());
    if failed > 0 {
        bail!("{failed} of {} image(s) failed", images.len());
    }
    Ok(())
}
