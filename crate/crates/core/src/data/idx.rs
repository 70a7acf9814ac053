//! IDX container (big-endian): `0x00000803` image tensors, `0x00000801`
//! label vectors.

use std::fs;
use std::path::Path;

use super::images::{DatasetMeta, ImageDataset};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| fmt_err(offset.min(bytes.len()), "truncated header"))
}

/// Parses an image file, returning `(count, rows, cols, pixels)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(fmt_err(0, format!("expected image magic 0x{IMAGE_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(fmt_err(
            bytes.len(),
            format!("truncated: header declares {need} pixel bytes, found {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(fmt_err(16 + need, format!("{} trailing bytes after pixel data", body.len() - need)));
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(fmt_err(0, format!("expected label magic 0x{LABEL_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(fmt_err(bytes.len(), format!("truncated: header declares {n} labels, found {}", body.len())));
    }
    if body.len() > n {
        return Err(fmt_err(8 + n, format!("{} trailing bytes after labels", body.len() - n)));
    }
    Ok(body.to_vec())
}

pub fn write_idx_images(ds: &ImageDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ds.images.len());
    for v in [IMAGE_MAGIC, ds.len() as u32, ds.rows as u32, ds.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&ds.images);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image file and its label file. Both must hold the same count.
pub fn load_idx(images: &Path, labels: &Path) -> Result<ImageDataset> {
    let (n, rows, cols, pixels) = read_idx_images(&fs::read(images)?)?;
    let lab = read_idx_labels(&fs::read(labels)?)?;
    if lab.len() != n {
        return Err(fmt_err(4, format!("label count {} does not match image count {n}", lab.len())));
    }
    let mut ds = ImageDataset::new(rows, cols, pixels, lab)?;
    ds.meta = DatasetMeta { sources: vec![images.display().to_string()], ratio: None, seed: None };
    Ok(ds)
}

pub fn write_idx(ds: &ImageDataset, images: &Path, labels: &Path) -> Result<()> {
    fs::write(images, write_idx_images(ds))?;
    fs::write(labels, write_idx_labels(&ds.labels))?;
    Ok(())
}
