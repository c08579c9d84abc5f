//! `scan train`: pretraining followed by adversarial training (or pixel-only
//! training in `fcn_only` mode) on the development part of a split.

use std::path::Path;

use anyhow::{bail, Context, Result};

use scan_core::train::Trainer;

use crate::common::{load_samples, Subset};
use crate::run::RunDir;
use crate::settings::{Overrides, Settings};

pub fn run(settings: &Settings, overrides: &Overrides, resume: Option<&Path>) -> Result<()> {
    let (run, settings) = match resume {
        Some(dir) => {
            let run = RunDir::reopen(dir)?;
            let recorded = run.manifest.settings.clone();
            if overrides.touches_training() && recorded.train != settings.train {
                bail!(
                    "--resume continues the recorded configuration; drop the training flags or start a new run \
                     (recorded: {}, requested: {})",
                    serde_json::to_string(&recorded.train)?,
                    serde_json::to_string(&settings.train)?
                );
            }
            (run, recorded)
        }
        None => {
            settings.require_split()?;
            (RunDir::create("train", settings, vec![])?, settings.clone())
        }
    };
    if settings.deterministic {
        scan_core::par::init_global_threads(1);
    }
    let (_, data) = load_samples(&settings, Subset::Development)?;
    let config = settings.train.clone();
    log::info!(
        "training {} on {} samples: {} epochs ({} pretraining), lambda {}",
        config.mode.name(),
        data.len(),
        config.epochs,
        config.pretrain_epochs,
        config.effective_lambda()
    );
    let mut trainer = match resume {
        Some(_) => Trainer::resume(config, &run.path).context("resuming training")?,
        None => Trainer::new(config)?.with_session(&run.path)?,
    };
    if resume.is_some() {
        println!("resuming at epoch {} (step {})", trainer.epoch(), trainer.step());
    }
    let outcome = trainer.run(&data)?;
    println!(
        "trained {} epochs, {} steps; last epoch pixel loss {}",
        outcome.epochs_completed,
        outcome.steps,
        outcome.last_epoch_pixel.map_or("n/a".into(), |v| format!("{v:.5}"))
    );
    println!("segmentor state hash {}", trainer.segmentor().net.state_hash());
    println!("run directory {}", run.path.display());
    Ok(())
}
