//! JSRT raw `.IMG` files: 2048x2048, 16-bit big-endian words holding
//! 12-bit values, no header.

use std::path::Path;

use crate::error::{Result, ScanError};
use crate::tensor::Tensor;

pub const JSRT_SIDE: usize = 2048;
pub const JSRT_MAX: u16 = 4095;
pub const JSRT_BYTES: usize = JSRT_SIDE * JSRT_SIDE * 2;

/// How stored values map to brightness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Polarity {
    /// Files are inverse video; decode as `4095 - raw` so that larger
    /// values are brighter on film.
    #[default]
    Inverted,
    AsStored,
}

impl Polarity {
    #[inline]
    pub fn apply(self, raw: u16) -> u16 {
        match self {
            Polarity::Inverted => JSRT_MAX - raw,
            Polarity::AsStored => raw,
        }
    }
}

pub fn load_jsrt_image(path: &Path) -> Result<Tensor> {
    load_jsrt_image_with(path, Polarity::default())
}

pub fn load_jsrt_image_with(path: &Path, polarity: Polarity) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| ScanError::io(path, e))?;
    decode_jsrt(&bytes, polarity).map_err(|reason| ScanError::format(path, reason))
}

/// Decodes an in-memory file. Values above 12 bits are clamped.
pub fn decode_jsrt(bytes: &[u8], polarity: Polarity) -> std::result::Result<Tensor, String> {
    if bytes.len() != JSRT_BYTES {
        return Err(format!("expected {JSRT_BYTES} bytes ({JSRT_SIDE}x{JSRT_SIDE} x 2), found {}", bytes.len()));
    }
    let mut clamped = 0usize;
    let data = bytes
        .chunks_exact(2)
        .map(|w| {
            let raw = u16::from_be_bytes([w[0], w[1]]);
            if raw > JSRT_MAX {
                clamped += 1;
            }
            polarity.apply(raw.min(JSRT_MAX)) as f32
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} JSRT values exceeded 12 bits and were clamped");
    }
    Ok(Tensor::from_vec(&[JSRT_SIDE, JSRT_SIDE, 1], data).expect("length checked"))
}
