//! Turns manifest entries into normalized samples at the working resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Result, ScanError};
use crate::par;
use crate::tensor::Tensor;

use super::cache::{self, CacheKey};
use super::image_io::{load_gray_image, load_mask};
use super::jsrt::{load_jsrt_image_with, Polarity};
use super::manifest::{DatasetManifest, ImageFormat, Source};
use super::normalize::normalize_per_image;
use super::resize::{one_hot_priority, resize_bilinear, resize_masks, Alignment};
use super::sample::ImageSample;

/// Files making up one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFiles {
    pub id: String,
    pub source: String,
    pub format: ImageFormat,
    pub image: PathBuf,
    /// Left lung, right lung, heart; `None` where the source has no such mask.
    pub masks: [Option<PathBuf>; 3],
    pub heart_annotated: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Drop failing samples instead of aborting.
    pub skip_failures: bool,
    pub polarity: Polarity,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// `(id, reason)` for every sample that failed.
    pub failures: Vec<(String, String)>,
    /// `(id, pixels)` where foreground annotations overlapped.
    pub conflicts: Vec<(String, usize)>,
    pub cache_hits: usize,
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| ScanError::io(dir, e))? {
        out.push(entry.map_err(|e| ScanError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> Option<String> {
    p.file_stem().map(|s| s.to_string_lossy().into_owned())
}

fn has_ext(p: &Path, exts: &[String]) -> bool {
    p.extension().is_some_and(|e| exts.iter().any(|x| x.as_str() == e))
}

fn find_mask(dir: &Path, id: &str, exts: &[String]) -> Option<PathBuf> {
    exts.iter().map(|e| dir.join(format!("{id}.{e}"))).find(|p| p.is_file())
}

/// Every image of a source, sorted by id. Mask paths are looked up but
/// not required to exist here; loading reports missing ones.
pub fn discover(manifest: &DatasetManifest, source: &Source) -> Result<Vec<SampleFiles>> {
    let dir = manifest.resolve(&source.images);
    let exts = source.image_extensions();
    let mask_dirs = [Some(&source.left_lung), Some(&source.right_lung), source.heart.as_ref()]
        .map(|d| d.map(|d| manifest.resolve(d)));
    let mut out = Vec::new();
    for path in list_dir(&dir)? {
        if !path.is_file() || !has_ext(&path, &exts) {
            continue;
        }
        let Some(id) = stem(&path) else { continue };
        let masks = mask_dirs.clone().map(|d| {
            d.map(|d| find_mask(&d, &id, &source.mask_extensions).unwrap_or_else(|| d.join(format!("{id}.<missing>"))))
        });
        out.push(SampleFiles {
            id,
            source: source.name.clone(),
            format: source.format,
            image: path,
            masks,
            heart_annotated: source.heart.is_some(),
        });
    }
    Ok(out)
}

/// Image decode, resize, normalize; masks decode, resize, re-binarize,
/// one-hot. Returns the sample and its overlap pixel count.
pub fn load_sample(
    files: &SampleFiles,
    resolution: usize,
    alignment: Alignment,
    polarity: Polarity,
) -> Result<(ImageSample, usize)> {
    let raw = match files.format {
        ImageFormat::JsrtRaw => load_jsrt_image_with(&files.image, polarity)?,
        ImageFormat::Gray => load_gray_image(&files.image)?,
    };
    let image = normalize_per_image(&resize_bilinear(&raw, resolution, resolution, alignment)?);
    let mut organs = Vec::with_capacity(3);
    for (k, path) in files.masks.iter().enumerate() {
        let Some(path) = path else { continue };
        if !path.is_file() {
            return Err(ScanError::Validation(format!(
                "{}: missing {} mask ({})",
                files.id,
                crate::CLASS_NAMES[k],
                path.display()
            )));
        }
        organs.push(resize_masks(&load_mask(path)?, resolution, resolution, alignment)?);
    }
    let organs: Vec<&Tensor> = organs.iter().collect();
    let (mask, conflicts) = one_hot_priority(&Tensor::concat_channels(&organs)?)?;
    let sample = ImageSample { id: files.id.clone(), image, mask, heart_annotated: files.heart_annotated };
    sample.validate()?;
    Ok((sample, conflicts))
}

/// Loads the samples named by `ids` from the chosen sources, in `ids` order.
pub fn assemble_samples(
    manifest: &DatasetManifest,
    sources: &[&Source],
    ids: &[String],
    options: LoadOptions,
) -> Result<(Vec<ImageSample>, LoadReport)> {
    let mut index = BTreeMap::new();
    for s in sources {
        for f in discover(manifest, s)? {
            if let Some(prev) = index.insert(f.id.clone(), f) {
                return Err(ScanError::Validation(format!("id `{}` appears in more than one source", prev.id)));
            }
        }
    }
    let cache_dir = manifest.cache_path();
    let results = par::map_slice(ids, |id| -> std::result::Result<(ImageSample, usize, bool), String> {
        let files = index.get(id).ok_or_else(|| format!("no image named `{id}`"))?;
        let load = || load_sample(files, manifest.resolution, manifest.alignment, options.polarity);
        let Some(dir) = &cache_dir else {
            return load().map(|(s, c)| (s, c, false)).map_err(|e| e.to_string());
        };
        let key = CacheKey::compute(files, manifest.resolution, manifest.alignment, options.polarity)
            .map_err(|e| e.to_string())?;
        if let Some((s, c)) = cache::read(dir, &key).map_err(|e| e.to_string())? {
            return Ok((s, c, true));
        }
        let (s, c) = load().map_err(|e| e.to_string())?;
        cache::write(dir, &key, &s, c).map_err(|e| e.to_string())?;
        Ok((s, c, false))
    });

    let mut samples = Vec::with_capacity(ids.len());
    let mut report = LoadReport::default();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok((s, c, hit)) => {
                if c > 0 {
                    log::warn!("{id}: {c} pixels carry more than one foreground label; kept the higher-priority class");
                    report.conflicts.push((id.clone(), c));
                }
                report.cache_hits += usize::from(hit);
                report.loaded.push(id.clone());
                samples.push(s);
            }
            Err(reason) => report.failures.push((id.clone(), reason)),
        }
    }
    if !report.failures.is_empty() && !options.skip_failures {
        let list: Vec<String> = report.failures.iter().map(|(id, r)| format!("  {id}: {r}")).collect();
        return Err(ScanError::Validation(format!(
            "{} of {} samples failed to load:\n{}",
            report.failures.len(),
            ids.len(),
            list.join("\n")
        )));
    }
    Ok((samples, report))
}
