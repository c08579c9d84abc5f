//! `scan prepare`: checks the dataset layout, draws the split and loads
//! every sample once (filling the cache when the manifest names one).

use std::path::PathBuf;

use anyhow::{bail, Result};
use serde::Serialize;

use scan_core::data::split::{JSRT_SPLIT, MONTGOMERY_SPLIT};
use scan_core::data::{
    assemble_samples, discover, make_split, DatasetChoice, DatasetManifest, DatasetSplit, LoadOptions, Source,
};

use crate::run::RunDir;
use crate::settings::Settings;

pub const REPORT_FILE: &str = "prepare_report.json";

/// Development share for a source: the published split when the image
/// count matches the published dataset, the same fraction otherwise.
pub fn development_count(source: &str, n: usize) -> usize {
    let published = match source {
        "jsrt" => Some(JSRT_SPLIT),
        "montgomery" => Some(MONTGOMERY_SPLIT),
        _ => None,
    };
    let (dev, eval) = published.unwrap_or(JSRT_SPLIT);
    if n == dev + eval {
        return dev;
    }
    let scaled = (n as f64 * dev as f64 / (dev + eval) as f64).round() as usize;
    scaled.clamp(1.min(n), n.saturating_sub(1))
}

/// Every expected directory of a source that is missing.
fn missing_dirs(manifest: &DatasetManifest, source: &Source) -> Vec<PathBuf> {
    let mut dirs = vec![&source.images, &source.left_lung, &source.right_lung];
    dirs.extend(source.heart.as_ref());
    dirs.into_iter().map(|d| manifest.resolve(d)).filter(|d| !d.is_dir()).collect()
}

#[derive(Serialize)]
struct SourceCounts {
    name: String,
    images: usize,
    development: usize,
    evaluation: usize,
}

#[derive(Serialize)]
struct PrepareReport {
    dataset: String,
    split_file: PathBuf,
    sources: Vec<SourceCounts>,
    loaded: usize,
    failures: Vec<(String, String)>,
    label_conflicts: Vec<(String, usize)>,
    cache_hits: usize,
}

pub fn run(settings: &Settings) -> Result<()> {
    let manifest = DatasetManifest::load(settings.require_manifest()?)?;
    let sources = manifest.select(settings.dataset)?;
    let mut missing = Vec::new();
    for s in &sources {
        missing.extend(missing_dirs(&manifest, s).into_iter().map(|d| format!("  {} ({})", d.display(), s.name)));
    }
    if !missing.is_empty() {
        bail!("missing dataset directories:\n{}", missing.join("\n"));
    }

    let run = RunDir::create("prepare", settings, vec![])?;
    let seed = settings.train.seed;
    let mut split = DatasetSplit {
        format: scan_core::data::split::SPLIT_FORMAT.into(),
        dataset: settings.dataset.name().into(),
        seed,
        development: Vec::new(),
        evaluation: Vec::new(),
    };
    let mut counts = Vec::new();
    for s in &sources {
        let ids: Vec<String> = discover(&manifest, s)?.into_iter().map(|f| f.id).collect();
        if ids.len() < 2 {
            bail!("source `{}` has {} image(s); a split needs at least two", s.name, ids.len());
        }
        let part = make_split(&s.name, &ids, seed, development_count(&s.name, ids.len()))?;
        counts.push(SourceCounts {
            name: s.name.clone(),
            images: ids.len(),
            development: part.development.len(),
            evaluation: part.evaluation.len(),
        });
        split.development.extend(part.development);
        split.evaluation.extend(part.evaluation);
    }
    let split_path = settings
        .split_file
        .clone()
        .unwrap_or_else(|| run.path.join(format!("split_{}.json", settings.dataset.name())));
    if let Some(parent) = split_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    split.save(&split_path)?;

    let all: Vec<String> = split.development.iter().chain(&split.evaluation).cloned().collect();
    let options = LoadOptions { skip_failures: true, ..Default::default() };
    let (_, load) = assemble_samples(&manifest, &sources, &all, options)?;

    for c in &counts {
        println!("{}: {} images -> {} development / {} evaluation", c.name, c.images, c.development, c.evaluation);
    }
    if settings.dataset == DatasetChoice::Combined {
        println!("combined: {} development / {} evaluation", split.development.len(), split.evaluation.len());
    }
    println!("split written to {}", split_path.display());
    println!("loaded {} of {} samples ({} from cache)", load.loaded.len(), all.len(), load.cache_hits);

    let report = PrepareReport {
        dataset: settings.dataset.name().into(),
        split_file: split_path,
        sources: counts,
        loaded: load.loaded.len(),
        failures: load.failures.clone(),
        label_conflicts: load.conflicts,
        cache_hits: load.cache_hits,
    };
    std::fs::write(run.path.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    if !load.failures.is_empty() {
        for (id, why) in &load.failures {
            eprintln!("failed: {id}: {why}");
        }
        bail!("{} sample(s) failed to load; see {}", load.failures.len(), run.path.join(REPORT_FILE).display());
    }
    Ok(())
}
