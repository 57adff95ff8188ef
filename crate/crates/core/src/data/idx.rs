//! IDX (big-endian MNIST container) reader and writer for u8 images and labels.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let chunk = self.take(4, what)?;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Idx {
            offset: self.bytes.len() as u64,
            reason: format!("truncated file: {what} needs {n} bytes from offset {}", self.pos),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn check_magic(c: &mut Cursor<'_>, want: u32) -> Result<()> {
    let magic = c.u32("magic")?;
    if magic != want {
        return Err(Error::Idx {
            offset: 0,
            reason: format!("bad magic 0x{magic:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

/// Parses an image file into N×1×H×W with pixels scaled by 1/255.
pub fn decode_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut c = Cursor { bytes, pos: 0 };
    check_magic(&mut c, IMAGES_MAGIC)?;
    let n = c.u32("image count")? as usize;
    let h = c.u32("row count")? as usize;
    let w = c.u32("column count")? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Idx {
            offset: 4,
            reason: format!("zero dimension in {n}×{h}×{w}"),
        });
    }
    let len = n.checked_mul(h * w).ok_or_else(|| Error::Idx {
        offset: 4,
        reason: "dimensions overflow".into(),
    })?;
    let pixels = c.take(len, "pixel data")?;
    if c.pos != bytes.len() {
        return Err(Error::Idx {
            offset: c.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    let scale = T::of(255.0);
    Tensor::new(vec![n, 1, h, w], pixels.iter().map(|&p| T::of(p as f64) / scale).collect())
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, pos: 0 };
    check_magic(&mut c, LABELS_MAGIC)?;
    let n = c.u32("label count")? as usize;
    let labels = c.take(n, "label data")?.to_vec();
    if c.pos != bytes.len() {
        return Err(Error::Idx {
            offset: c.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    Ok(labels)
}

pub fn read_idx_images<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_idx_images(&fs::read(path)?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    decode_idx_labels(&fs::read(path)?)
}

/// Builds a dataset from an images/labels pair. The class count is one more
/// than the largest label.
pub fn dataset_from_idx<T: Scalar>(images: &[u8], labels: &[u8]) -> Result<Dataset<T>> {
    let images = decode_idx_images::<T>(images)?;
    let labels = decode_idx_labels(labels)?;
    if labels.len() != images.shape()[0] {
        return Err(Error::Idx {
            offset: 4,
            reason: format!("label count {} does not match image count {}", labels.len(), images.shape()[0]),
        });
    }
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    Dataset::new(images, labels.into_iter().map(usize::from).collect(), classes)
}

pub fn load_idx<T: Scalar>(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    dataset_from_idx(&fs::read(image_path)?, &fs::read(label_path)?)
}

/// Encodes N×C×H×W (C must be 1) or N×H×W values in `[0, 1]` as u8 pixels,
/// `round(255 v)`.
pub fn encode_idx_images<T: Scalar>(images: &Tensor<T>) -> Result<Vec<u8>> {
    let (n, h, w) = match *images.shape() {
        [n, 1, h, w] | [n, h, w] => (n, h, w),
        ref s => {
            return Err(Error::shape(
                "idx encode",
                "images",
                format!("expected N×1×H×W or N×H×W, got {s:?}"),
            ))
        }
    };
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(
        images
            .data()
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
