//! Network checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SCANCKPT"            magic
//! u32                    format version
//! [u8; 16]               architecture fingerprint (hex of the schedule hash)
//! u64 + bytes            schedule as JSON
//! u64                    tensor count
//! tensor dumps           parameters in schedule order, then norm buffers
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};

use super::network::Network;
use super::spec::LayerSpec;

pub const MAGIC: &[u8; 8] = b"SCANCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let run = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        drop(w);
        std::fs::rename(&tmp, path)
    };
    run().map_err(|e| ScanError::io(path, e))
}

struct Header {
    fingerprint: String,
    specs: Vec<LayerSpec>,
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<Header> {
    let bad = |reason: String| ScanError::format(path, reason);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| bad(format!("reading magic: {e}")))?;
    if &magic != MAGIC {
        return Err(bad("not a network checkpoint".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver).map_err(|e| bad(e.to_string()))?;
    let version = u32::from_le_bytes(ver);
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let mut fp = [0u8; 16];
    r.read_exact(&mut fp).map_err(|e| bad(e.to_string()))?;
    let fingerprint = String::from_utf8(fp.to_vec()).map_err(|_| bad("fingerprint is not ASCII".into()))?;
    let len = read_u64(r).map_err(|e| bad(e.to_string()))? as usize;
    if len > 1 << 24 {
        return Err(bad(format!("schedule length {len}")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| bad(e.to_string()))?;
    let specs = serde_json::from_slice(&json)?;
    Ok(Header { fingerprint, specs })
}

pub fn save_network<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let fp = net.fingerprint();
    let json = serde_json::to_vec(net.specs())?;
    let tensors: Vec<&Tensor<T>> = net.params().into_iter().chain(net.buffers()).collect();
    write_atomic(path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(fp.as_bytes())?;
        write_u64(w, json.len() as u64)?;
        w.write_all(&json)?;
        write_u64(w, tensors.len() as u64)?;
        for t in tensors {
            t.write_dump(&mut *w)?;
        }
        Ok(())
    })
}

/// Fingerprint stored in a checkpoint file.
pub fn read_fingerprint(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path).map_err(|e| ScanError::io(path, e))?);
    Ok(read_header(&mut r, path)?.fingerprint)
}

/// Loads parameters and buffers into `net`, refusing a checkpoint written
/// for a different schedule.
pub fn load_into<T: Scalar>(net: &mut Network<T>, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path).map_err(|e| ScanError::io(path, e))?);
    let header = read_header(&mut r, path)?;
    let expected = net.fingerprint();
    if header.fingerprint != expected {
        return Err(ScanError::Fingerprint { expected, found: header.fingerprint });
    }
    read_tensors_into(&mut r, path, net)
}

/// Rebuilds a network from the schedule stored in the checkpoint.
pub fn load_network(path: &Path) -> Result<Network<f32>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| ScanError::io(path, e))?);
    let header = read_header(&mut r, path)?;
    let mut net = Network::<f32>::from_specs(header.specs, 0)?;
    if net.fingerprint() != header.fingerprint {
        return Err(ScanError::Fingerprint { expected: net.fingerprint(), found: header.fingerprint });
    }
    read_tensors_into(&mut r, path, &mut net)?;
    Ok(net)
}

fn read_tensors_into<T: Scalar, R: Read>(r: &mut R, path: &Path, net: &mut Network<T>) -> Result<()> {
    let count = read_u64(r).map_err(|e| ScanError::format(path, e.to_string()))? as usize;
    let mut slots: Vec<&mut Tensor<T>> = Vec::new();
    let n_params = net.params().len();
    let n_buffers = net.buffers().len();
    if count != n_params + n_buffers {
        return Err(ScanError::format(path, format!("{count} tensors, network holds {}", n_params + n_buffers)));
    }
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        loaded.push(Tensor::<T>::read_dump(&mut *r).map_err(|e| ScanError::format(path, e.to_string()))?);
    }
    let (params, buffers): (Vec<_>, Vec<_>) = {
        let mut it = loaded.into_iter();
        let p: Vec<_> = it.by_ref().take(n_params).collect();
        (p, it.collect())
    };
    for (dst, src) in net.params_mut().into_iter().zip(params) {
        if dst.shape() != src.shape() {
            return Err(ScanError::format(path, format!("tensor {:?} for slot {:?}", src.shape(), dst.shape())));
        }
        *dst = src;
    }
    slots.extend(net.buffers_mut());
    for (dst, src) in slots.into_iter().zip(buffers) {
        if dst.shape() != src.shape() {
            return Err(ScanError::format(path, format!("buffer {:?} for slot {:?}", src.shape(), dst.shape())));
        }
        *dst = src;
    }
    Ok(())
}
