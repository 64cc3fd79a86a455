//! IDX (MNIST-style) and CIFAR binary readers, plus an IDX writer used to
//! export synthetic data with 8-bit quantization.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_PIXELS: usize = 32 * 32 * 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", at + 4),
        })
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    let (dims, header) = match magic {
        IDX_IMAGES => (3, 16),
        IDX_LABELS => (1, 8),
        found => {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found,
            })
        }
    };
    let sizes = (0..dims)
        .map(|d| be_u32(&bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let expected: usize = sizes.iter().product();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("expected {expected} data bytes, found {}", body.len()),
        });
    }
    Ok(if dims == 3 {
        IdxData::Images {
            count: sizes[0],
            rows: sizes[1],
            cols: sizes[2],
            pixels: body.to_vec(),
        }
    } else {
        IdxData::Labels(body.to_vec())
    })
}

/// Reads one IDX file, returning its labels or its images scaled to `[0, 1]`.
pub fn load_idx(path: &Path) -> Result<IdxData> {
    read_idx(path)
}

/// Pairs an IDX image file with an IDX label file.
pub fn load_idx_dataset(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let IdxData::Images {
        count,
        rows,
        cols,
        pixels,
    } = read_idx(images)?
    else {
        return Err(Error::Invalid(format!("{} is not an IDX image file", images.display())));
    };
    let IdxData::Labels(ys) = read_idx(labels)? else {
        return Err(Error::Invalid(format!("{} is not an IDX label file", labels.display())));
    };
    if ys.len() != count {
        return Err(Error::Invalid(format!("{count} images but {} labels", ys.len())));
    }
    let samples = pixels
        .chunks_exact(rows * cols)
        .zip(&ys)
        .map(|(px, &y)| {
            let y = y as usize;
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            let data = px.iter().map(|&b| b as f64 / 255.0).collect();
            Ok(LabeledSample {
                image: Tensor::new(vec![rows, cols, 1], data)?,
                label: y,
                original_label: y,
            })
        })
        .collect::<Result<_>>()?;
    Dataset::new(classes, [rows, cols, 1], samples)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes single-channel images as an IDX image file (`round(255 * v)`).
pub fn write_idx_images(path: &Path, data: &Dataset) -> Result<()> {
    let [h, w, c] = data.shape;
    if c != 1 {
        return Err(Error::Invalid("IDX images are single-channel".into()));
    }
    let mut out = Vec::with_capacity(16 + data.len() * h * w);
    out.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    for d in [data.len(), h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for s in &data.samples {
        out.extend(s.image.data().iter().map(|&v| quantize(v)));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, data: &Dataset) -> Result<()> {
    if data.classes > 256 {
        return Err(Error::Invalid("IDX labels hold at most 256 classes".into()));
    }
    let mut out = Vec::with_capacity(8 + data.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend(data.samples.iter().map(|s| s.label as u8));
    fs::write(path, out)?;
    Ok(())
}

/// Reads CIFAR binary batches. With 100 classes each record carries a coarse
/// and a fine label byte and the fine label is used; otherwise one label byte.
/// Pixels are stored channel-planar and returned as `[32, 32, 3]` in `[0, 1]`.
pub fn load_cifar_binary(paths: &[PathBuf], classes: usize) -> Result<Dataset> {
    let label_bytes = if classes == 100 { 2 } else { 1 };
    let record = label_bytes + CIFAR_PIXELS;
    let mut samples = Vec::new();
    for path in paths {
        let bytes = fs::read(path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Truncated {
                path: path.clone(),
                detail: format!("{} bytes is not a whole number of {record}-byte records", bytes.len()),
            });
        }
        for rec in bytes.chunks_exact(record) {
            let y = rec[label_bytes - 1] as usize;
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            let planes = &rec[label_bytes..];
            let mut data = Vec::with_capacity(CIFAR_PIXELS);
            for p in 0..1024 {
                for ch in 0..3 {
                    data.push(planes[ch * 1024 + p] as f64 / 255.0);
                }
            }
            samples.push(LabeledSample {
                image: Tensor::new(vec![32, 32, 3], data)?,
                label: y,
                original_label: y,
            });
        }
    }
    Dataset::new(classes, [32, 32, 3], samples)
}
