//! MNIST digits in the big-endian IDX container.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;

/// Images scaled to [0, 1] (byte / 255) with their digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitSet {
    images: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl DigitSet {
    pub fn new(images: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Idx(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if images.iter().any(|im| im.len() != SIDE * SIDE) {
            return Err(Error::shape("digit images must be 28x28"));
        }
        if labels.iter().any(|&l| l > 9) {
            return Err(Error::Idx("digit label outside 0..9".into()));
        }
        Ok(DigitSet { images, labels })
    }

    /// Reads a matched image/label file pair; `.gz` files are decompressed.
    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        let imgs = read_idx_images(&read_maybe_gz(images)?)?;
        let labs = read_idx_labels(&read_maybe_gz(labels)?)?;
        Self::new(imgs, labs)
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Items `start..end`, clamped to the set size.
    pub fn slice(&self, start: usize, end: usize) -> DigitSet {
        let end = end.min(self.len());
        let start = start.min(end);
        DigitSet {
            images: self.images[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }
}

pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::file(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(Error::Idx(format!(
            "header needs {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(0) != magic {
        return Err(Error::Idx(format!("magic 0x{:08x}, expected 0x{magic:08x}", word(0))));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn payload(bytes: &[u8], offset: usize, declared: usize) -> Result<&[u8]> {
    let body = &bytes[offset..];
    if body.len() != declared {
        return Err(Error::Idx(format!(
            "header declares {declared} payload bytes, found {}",
            body.len()
        )));
    }
    Ok(body)
}

pub fn read_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let dims = header(bytes, IMAGE_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    if rows != SIDE || cols != SIDE {
        return Err(Error::Idx(format!("images are {rows}x{cols}, expected 28x28")));
    }
    let declared = count
        .checked_mul(rows * cols)
        .ok_or_else(|| Error::Idx("declared size overflows".into()))?;
    let body = payload(bytes, 16, declared)?;
    Ok(body
        .chunks_exact(rows * cols)
        .map(|im| im.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect())
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let dims = header(bytes, LABEL_MAGIC, 1)?;
    let body = payload(bytes, 8, dims[0])?;
    if let Some(pos) = body.iter().position(|&l| l > 9) {
        return Err(Error::Idx(format!("label {} at index {pos} is not a digit", body[pos])));
    }
    Ok(body.to_vec())
}

/// Inverse of [`read_idx_images`] for pixels that are exact multiples of 1/255.
pub fn write_idx_images(images: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + images.len() * SIDE * SIDE);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&count_u32(images.len())?.to_be_bytes());
    out.extend_from_slice(&(SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(SIDE as u32).to_be_bytes());
    for im in images {
        if im.len() != SIDE * SIDE {
            return Err(Error::shape("digit images must be 28x28"));
        }
        for &p in im {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("pixel {p} outside [0, 1]")));
            }
            out.push((p * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    if labels.iter().any(|&l| l > 9) {
        return Err(Error::invalid("digit label outside 0..9"));
    }
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&count_u32(labels.len())?.to_be_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

fn count_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid("too many items for IDX"))
}
