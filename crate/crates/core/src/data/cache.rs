//! Preprocessed-sample cache keyed by a hash of the source bytes and the
//! pipeline settings.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Result, ScanError};
use crate::model::checkpoint::{read_u64, write_atomic, write_u64};
use crate::tensor::Tensor;

use super::assemble::SampleFiles;
use super::jsrt::Polarity;
use super::resize::Alignment;
use super::sample::ImageSample;

/// Bump when any preprocessing step changes its output.
pub const PIPELINE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SCANSMPL";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn compute(files: &SampleFiles, resolution: usize, alignment: Alignment, polarity: Polarity) -> Result<Self> {
        let mut h = Sha256::new();
        h.update(PIPELINE_VERSION.to_le_bytes());
        h.update(format!("{resolution}|{alignment:?}|{polarity:?}|{:?}|{}", files.format, files.id).as_bytes());
        for p in std::iter::once(Some(&files.image)).chain(files.masks.iter().map(Option::as_ref)) {
            match p {
                Some(p) => {
                    let bytes = std::fs::read(p).map_err(|e| ScanError::io(p, e))?;
                    h.update((bytes.len() as u64).to_le_bytes());
                    h.update(&bytes);
                }
                None => h.update(u64::MAX.to_le_bytes()),
            }
        }
        Ok(Self(h.finalize().iter().map(|b| format!("{b:02x}")).collect()))
    }

    fn path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.sample", self.0))
    }
}

pub fn read(dir: &Path, key: &CacheKey) -> Result<Option<(ImageSample, usize)>> {
    let path = key.path(dir);
    let Ok(f) = File::open(&path) else { return Ok(None) };
    let mut r = BufReader::new(f);
    let bad = |e: std::io::Error| ScanError::format(&path, e.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(ScanError::format(&path, "not a cached sample"));
    }
    let id_len = read_u64(&mut r).map_err(bad)? as usize;
    let mut id = vec![0u8; id_len.min(4096)];
    r.read_exact(&mut id).map_err(bad)?;
    let mut flag = [0u8];
    r.read_exact(&mut flag).map_err(bad)?;
    let conflicts = read_u64(&mut r).map_err(bad)? as usize;
    let image = Tensor::read_dump(&mut r).map_err(bad)?;
    let mask = Tensor::read_dump(&mut r).map_err(bad)?;
    let sample = ImageSample {
        id: String::from_utf8_lossy(&id).into_owned(),
        image,
        mask,
        heart_annotated: flag[0] == 1,
    };
    sample.validate()?;
    Ok(Some((sample, conflicts)))
}

pub fn write(dir: &Path, key: &CacheKey, sample: &ImageSample, conflicts: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ScanError::io(dir, e))?;
    write_atomic(&key.path(dir), |w| {
        w.write_all(MAGIC)?;
        write_u64(w, sample.id.len() as u64)?;
        w.write_all(sample.id.as_bytes())?;
        w.write_all(&[u8::from(sample.heart_annotated)])?;
        write_u64(w, conflicts as u64)?;
        sample.image.write_dump(&mut *w)?;
        sample.mask.write_dump(&mut *w)
    })
}
