//! Dataset manifest: where images and per-organ masks live.
//!
//! ```toml
//! root = "/data/cxr"            # SCAN_DATA_ROOT overrides this
//! resolution = 400
//! cache_dir = "cache"           # optional, relative to root
//!
//! [[source]]
//! name = "jsrt"
//! format = "jsrt_raw"
//! images = "JSRT/images"
//! left_lung = "SCR/masks/left lung"
//! right_lung = "SCR/masks/right lung"
//! heart = "SCR/masks/heart"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::resize::Alignment;
use crate::error::{Result, ScanError};

pub const DATA_ROOT_ENV: &str = "SCAN_DATA_ROOT";
pub const DEFAULT_RESOLUTION: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    /// Headerless 2048x2048 big-endian 12-bit files.
    JsrtRaw,
    /// Any grayscale file `image` can decode.
    Gray,
}

impl ImageFormat {
    fn default_extensions(self) -> Vec<String> {
        match self {
            ImageFormat::JsrtRaw => vec!["IMG".into(), "img".into()],
            ImageFormat::Gray => vec!["png".into(), "PNG".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub name: String,
    pub format: ImageFormat,
    pub images: PathBuf,
    pub left_lung: PathBuf,
    pub right_lung: PathBuf,
    /// Absent for sources without heart annotation.
    #[serde(default)]
    pub heart: Option<PathBuf>,
    #[serde(default)]
    pub image_extensions: Option<Vec<String>>,
    #[serde(default = "default_mask_extensions")]
    pub mask_extensions: Vec<String>,
}

fn default_mask_extensions() -> Vec<String> {
    ["gif", "png", "GIF", "PNG"].map(String::from).to_vec()
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl Source {
    pub fn image_extensions(&self) -> Vec<String> {
        self.image_extensions.clone().unwrap_or_else(|| self.format.default_extensions())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub alignment: Alignment,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(rename = "source")]
    pub sources: Vec<Source>,
}

/// Which sources a run draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetChoice {
    Jsrt,
    Montgomery,
    Combined,
}

impl DatasetChoice {
    pub fn name(self) -> &'static str {
        match self {
            DatasetChoice::Jsrt => "jsrt",
            DatasetChoice::Montgomery => "montgomery",
            DatasetChoice::Combined => "combined",
        }
    }
}

impl std::str::FromStr for DatasetChoice {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsrt" => Ok(Self::Jsrt),
            "montgomery" => Ok(Self::Montgomery),
            "combined" => Ok(Self::Combined),
            o => Err(ScanError::Config(format!("unknown dataset `{o}` (jsrt, montgomery or combined)"))),
        }
    }
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| ScanError::Config(format!("dataset manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest; a relative `root` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
        let mut m = Self::parse(&text)?;
        if m.root.is_relative() {
            m.root = path.parent().unwrap_or(Path::new(".")).join(&m.root);
        }
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(ScanError::Config("dataset manifest lists no sources".into()));
        }
        let mut names: Vec<_> = self.sources.iter().map(|s| &s.name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ScanError::Config("duplicate source names in dataset manifest".into()));
        }
        crate::model::check_resolution(self.resolution, self.resolution)
    }

    /// Root after applying the environment override.
    pub fn data_root(&self) -> PathBuf {
        std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| self.root.clone())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root().join(p)
        }
    }

    pub fn cache_path(&self) -> Option<PathBuf> {
        self.cache_dir.as_deref().map(|p| self.resolve(p))
    }

    pub fn source(&self, name: &str) -> Option<&Source> {
        self.sources.iter().find(|s| s.name == name)
    }

    /// Sources used for a dataset choice.
    pub fn select(&self, choice: DatasetChoice) -> Result<Vec<&Source>> {
        let pick = |n: &str| {
            self.source(n).ok_or_else(|| ScanError::Config(format!("dataset manifest has no `{n}` source")))
        };
        Ok(match choice {
            DatasetChoice::Jsrt => vec![pick("jsrt")?],
            DatasetChoice::Montgomery => vec![pick("montgomery")?],
            DatasetChoice::Combined => self.sources.iter().collect(),
        })
    }
}
