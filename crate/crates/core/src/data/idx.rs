//! Reader for the IDX binary layout used by the MNIST distribution.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images (`height × width`, scaled to `[0, 1]`) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDigits {
    pub images: Vec<Tensor>,
    pub labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            path,
            format!("truncated: header promises {n} labels, found {}", body.len()),
        ));
    }
    Ok(body[..n].to_vec())
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Tensor>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let px = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * px {
        return Err(Error::format(
            path,
            format!("truncated: need {} pixel bytes, found {}", n * px, body.len()),
        ));
    }
    Ok(body
        .chunks_exact(px)
        .take(n)
        .map(|chunk| {
            let data = chunk.iter().map(|&b| b as f64 / 255.0).collect();
            Tensor::new(vec![rows, cols], data).expect("sized by chunk")
        })
        .collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDigits> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| Error::Ingest {
            path: p.to_path_buf(),
            source,
        })
    };
    let images = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::format(
            labels_path,
            format!("{} images but {} labels", images.len(), labels.len()),
        ));
    }
    Ok(IdxDigits { images, labels })
}
