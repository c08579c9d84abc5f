//! Run directories: naming, the exclusive lock and the run manifest.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use scan_core::data::cache::PIPELINE_VERSION;
use scan_core::data::split::SPLIT_FORMAT;
use scan_core::model::checkpoint::FORMAT_VERSION;

use crate::settings::Settings;

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub tool: String,
    pub checkpoint_format: u32,
    pub split_format: String,
    pub pipeline: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            tool: env!("CARGO_PKG_VERSION").into(),
            checkpoint_format: FORMAT_VERSION,
            split_format: SPLIT_FORMAT.into(),
            pipeline: PIPELINE_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    pub critic: u64,
}

/// Everything needed to replay a command. Written before any work starts
/// and never rewritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub settings: Settings,
    pub seeds: Seeds,
    pub versions: Versions,
    /// Extra inputs (checkpoint, image paths).
    pub inputs: Vec<PathBuf>,
    pub started: String,
    pub run_dir: PathBuf,
}

impl RunManifest {
    pub fn new(command: &str, settings: &Settings, inputs: Vec<PathBuf>, run_dir: &Path) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().collect(),
            settings: settings.clone(),
            seeds: Seeds { run: settings.train.seed, critic: settings.train.critic_seed() },
            versions: Versions::current(),
            inputs,
            started: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            run_dir: run_dir.to_path_buf(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    fn write_new(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&p)
            .with_context(|| format!("creating {}", p.display()))?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        Ok(())
    }
}

/// Exclusive hold on a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = std::fs::read_to_string(&path).unwrap_or_default();
                bail!(
                    "run directory {} is locked by process {} (delete {} if that process is gone)",
                    dir.display(),
                    owner.trim(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("locking {}", dir.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// A locked run directory with its manifest on disk.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
    _lock: RunLock,
}

impl RunDir {
    /// Creates `<out_dir>/<UTC timestamp>-<command>-<settings digest>` and
    /// writes the manifest into it.
    pub fn create(command: &str, settings: &Settings, inputs: Vec<PathBuf>) -> Result<Self> {
        std::fs::create_dir_all(&settings.out_dir)
            .with_context(|| format!("creating output directory {}", settings.out_dir.display()))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{stamp}-{command}-{}", settings.digest());
        let mut path = settings.out_dir.join(&base);
        let mut n = 1;
        loop {
            match std::fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    path = settings.out_dir.join(format!("{base}-{n}"));
                }
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
        let lock = RunLock::acquire(&path)?;
        let manifest = RunManifest::new(command, settings, inputs, &path);
        manifest.write_new(&path)?;
        log::info!("run directory {}", path.display());
        Ok(Self { path, manifest, _lock: lock })
    }

    /// Reopens an existing run directory, keeping its manifest.
    pub fn reopen(path: &Path) -> Result<Self> {
        let lock = RunLock::acquire(path)?;
        let manifest = RunManifest::read(path)?;
        Ok(Self { path: path.to_path_buf(), manifest, _lock: lock })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::settings::{FileConfig, Overrides};

    fn settings(out: &Path) -> Settings {
        let cli = Overrides { out_dir: Some(out.to_path_buf()), ..Default::default() };
        Settings::merge(FileConfig::default(), &cli).unwrap()
    }

    #[test]
    fn manifest_comes_first_and_lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(dir.path());
        let run = RunDir::create("train", &s, vec![]).unwrap();
        let m = RunManifest::read(&run.path).unwrap();
        assert_eq!(m.settings, s);
        assert_eq!(m.command, "train");
        assert!(RunDir::reopen(&run.path).is_err(), "second holder must be refused");
        let path = run.path.clone();
        drop(run);
        assert!(!path.join(LOCK_FILE).exists());
        let again = RunDir::reopen(&path).unwrap();
        assert_eq!(again.manifest, m);
    }

    #[test]
    fn same_second_runs_get_distinct_directories() {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(dir.path());
        let a = RunDir::create("eval", &s, vec![]).unwrap();
        let b = RunDir::create("eval", &s, vec![]).unwrap();
        assert_ne!(a.path, b.path);
    }
}
