//! Versioned binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "DPADCKPT"
//! version    u32
//! arch_len   u64      length of the JSON architecture descriptor
//! arch       arch_len bytes
//! count      u64      number of parameters
//! params     count * f64
//! sha256     32 bytes over every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Model, ModelArch};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DPADCKPT";
const VERSION: u32 = 1;

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

pub fn write_checkpoint<W: Write>(model: &Model, mut out: W) -> Result<()> {
    let arch = serde_json::to_vec(model.arch())?;
    let mut buf = Vec::with_capacity(60 + arch.len() + 8 * model.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(arch.len() as u64).to_le_bytes());
    buf.extend_from_slice(&arch);
    buf.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Model> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if buf.len() < *pos + n {
            return Err(fmt_err(*pos, format!("truncated: need {n} more bytes")));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let mut pos = 0;
    if take(&mut pos, 8)? != MAGIC {
        return Err(fmt_err(0, "bad checkpoint magic"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fmt_err(8, format!("unsupported checkpoint version {version}")));
    }
    let arch_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
    let arch_at = pos;
    let arch: ModelArch = serde_json::from_slice(take(&mut pos, arch_len)?)
        .map_err(|e| fmt_err(arch_at, format!("architecture: {e}")))?;
    let count_at = pos;
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
    let payload = take(&mut pos, count.checked_mul(8).ok_or_else(|| fmt_err(count_at, "parameter count overflow"))?)?;
    let params: Vec<f64> =
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let body_end = pos;
    let stored = take(&mut pos, 32)?;
    if Sha256::digest(&buf[..body_end]).as_slice() != stored {
        return Err(fmt_err(body_end, "content hash mismatch"));
    }
    if pos != buf.len() {
        return Err(fmt_err(pos, "trailing bytes after checkpoint"));
    }
    Model::from_parts(arch, params).map_err(|e| fmt_err(count_at, e.to_string()))
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
