//! Helpers shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use scan_core::data::{assemble_samples, discover, DatasetManifest, DatasetSplit, ImageSample, LoadOptions};
use scan_core::model::checkpoint::load_network;
use scan_core::model::SegmentorNetwork;
use scan_core::train::trainer::{latest_checkpoint, segmentor_checkpoint, CHECKPOINT_DIR};

use crate::settings::Settings;

/// Which part of a split a command works on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    Development,
    Evaluation,
    All,
}

/// Loads the split and checks it belongs to the configured dataset.
pub fn load_split(settings: &Settings, path: &Path) -> Result<DatasetSplit> {
    let split = DatasetSplit::load(path)?;
    if split.dataset != settings.dataset.name() {
        bail!(
            "validation error: split {} was drawn for `{}` but the run uses dataset `{}`",
            path.display(),
            split.dataset,
            settings.dataset.name()
        );
    }
    Ok(split)
}

/// Samples of `subset`, in split order. Without a split file every image of
/// the dataset is used (cross-dataset evaluation).
pub fn load_samples(settings: &Settings, subset: Subset) -> Result<(DatasetManifest, Vec<ImageSample>)> {
    let split = settings.split_file.as_deref().map(|p| load_split(settings, p)).transpose()?;
    let manifest = DatasetManifest::load(settings.require_manifest()?)?;
    let sources = manifest.select(settings.dataset)?;
    let ids: Vec<String> = match split {
        Some(split) => {
            match subset {
                Subset::Development => split.development,
                Subset::Evaluation => split.evaluation,
                Subset::All => split.development.into_iter().chain(split.evaluation).collect(),
            }
        }
        None => {
            let mut ids = Vec::new();
            for s in &sources {
                ids.extend(discover(&manifest, s)?.into_iter().map(|f| f.id));
            }
            ids
        }
    };
    if ids.is_empty() {
        bail!("no samples selected");
    }
    let (samples, _) = assemble_samples(&manifest, &sources, &ids, LoadOptions::default())?;
    Ok((manifest, samples))
}

/// A checkpoint file, or a run directory whose newest segmentor checkpoint
/// is taken.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    if path.join(CHECKPOINT_DIR).is_dir() {
        let epoch = latest_checkpoint(path)?
            .with_context(|| format!("run directory {} holds no complete checkpoint", path.display()))?;
        return Ok(segmentor_checkpoint(path, epoch));
    }
    bail!("checkpoint {} is neither a checkpoint file nor a run directory", path.display())
}

pub fn load_segmentor(path: &Path) -> Result<SegmentorNetwork> {
    let file = resolve_checkpoint(path)?;
    let net = load_network(&file).with_context(|| format!("loading {}", file.display()))?;
    SegmentorNetwork::from_network(net).with_context(|| format!("{} is not a segmentor checkpoint", file.display()))
}
