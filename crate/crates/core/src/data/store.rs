//! Dataset directory layout.
//!
//! `gen-data` writes `manifest.toml` plus one raw dump per split
//! (`train.bin`, `val.bin`, `test.bin`). A raw dump is:
//!
//! ```text
//! magic       8 bytes "PGDRAW01"
//! header      u32 LE: n, channels, height, width, n_attrs
//! images      n * channels * height * width f32 LE (CHW per sample)
//! labels      n u32 LE
//! bias        n * n_attrs u32 LE
//! aligned     n * n_attrs u8 (0/1)
//! ```
//!
//! The manifest records the generating spec, the class palettes, and the
//! SHA-256 of each raw dump.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BiasedDataset, DatasetSpec, LabeledSample};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const RAW_MAGIC: &[u8; 8] = b"PGDRAW01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitChecksums {
    pub train: String,
    pub val: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub palettes: Vec<Vec<[f64; 3]>>,
    pub checksums: SplitChecksums,
}

impl DatasetManifest {
    /// Manifest of an in-memory dataset.
    pub fn of(ds: &BiasedDataset) -> Self {
        Self {
            spec: ds.spec.clone(),
            palettes: ds.palettes.clone(),
            checksums: SplitChecksums {
                train: split_checksum(&ds.train),
                val: split_checksum(&ds.val),
                test: split_checksum(&ds.test),
            },
        }
    }

    /// Digest over the whole manifest; equal for byte-identical datasets.
    pub fn checksum(&self) -> String {
        let text = toml::to_string(self).expect("manifest serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_raw_split(samples: &[LabeledSample]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RAW_MAGIC);
    let (c, h, w) = samples
        .first()
        .map(|s| (s.image.shape()[0], s.image.shape()[1], s.image.shape()[2]))
        .unwrap_or((0, 0, 0));
    let n_attrs = samples.first().map_or(0, |s| s.bias_values.len());
    for v in [samples.len(), c, h, w, n_attrs] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in samples {
        for &v in s.image.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for s in samples {
        out.extend_from_slice(&(s.target as u32).to_le_bytes());
    }
    for s in samples {
        for &b in &s.bias_values {
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
    }
    for s in samples {
        out.extend(s.aligned.iter().map(|&a| a as u8));
    }
    out
}

pub fn read_raw_split(bytes: &[u8], path: &Path) -> Result<Vec<LabeledSample>> {
    if bytes.get(..8) != Some(RAW_MAGIC.as_slice()) {
        return Err(Error::format(path, "bad raw dump magic"));
    }
    let mut pos = 8;
    let u32_at = |pos: &mut usize| -> Result<u32> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| Error::format(path, "truncated raw dump"))?;
        *pos += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = u32_at(&mut pos)? as usize;
    }
    let [n, c, h, w, n_attrs] = dims;
    let numel = c * h * w;
    let needed = pos + n * numel * 4 + n * 4 + n * n_attrs * 4 + n * n_attrs;
    if bytes.len() != needed {
        return Err(Error::format(
            path,
            format!("expected {needed} bytes, found {}", bytes.len()),
        ));
    }
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let data = bytes[pos..pos + numel * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        pos += numel * 4;
        images.push(Tensor::new(vec![c, h, w], data)?);
    }
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        targets.push(u32_at(&mut pos)? as usize);
    }
    let mut bias = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = Vec::with_capacity(n_attrs);
        for _ in 0..n_attrs {
            v.push(u32_at(&mut pos)? as usize);
        }
        bias.push(v);
    }
    let mut samples = Vec::with_capacity(n);
    for ((image, target), bias_values) in images.into_iter().zip(targets).zip(bias) {
        let aligned = bytes[pos..pos + n_attrs].iter().map(|&b| b != 0).collect();
        pos += n_attrs;
        samples.push(LabeledSample {
            image,
            target,
            bias_values,
            aligned,
        });
    }
    Ok(samples)
}

pub fn split_checksum(samples: &[LabeledSample]) -> String {
    hex(&Sha256::digest(write_raw_split(samples)))
}

/// Writes the manifest and the three raw dumps; returns the manifest.
pub fn write_dataset_dir(ds: &BiasedDataset, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    for (name, split) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        std::fs::write(dir.join(format!("{name}.bin")), write_raw_split(split))?;
    }
    let manifest = DatasetManifest::of(ds);
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(manifest)
}

/// Loads a dataset directory, verifying each split against the manifest checksum.
pub fn read_dataset_dir(dir: &Path) -> Result<BiasedDataset> {
    let manifest_path = dir.join("manifest.toml");
    let text = std::fs::read_to_string(&manifest_path).map_err(|source| Error::Ingest {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    let load = |name: &str, expected: &str| -> Result<Vec<LabeledSample>> {
        let path = dir.join(format!("{name}.bin"));
        let bytes = std::fs::read(&path).map_err(|source| Error::Ingest {
            path: path.clone(),
            source,
        })?;
        if hex(&Sha256::digest(&bytes)) != expected {
            return Err(Error::format(&path, "checksum does not match manifest"));
        }
        read_raw_split(&bytes, &path)
    };
    Ok(BiasedDataset {
        train: load("train", &manifest.checksums.train)?,
        val: load("val", &manifest.checksums.val)?,
        test: load("test", &manifest.checksums.test)?,
        spec: manifest.spec,
        palettes: manifest.palettes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_biased_dataset;

    fn tiny() -> BiasedDataset {
        generate_biased_dataset(&DatasetSpec {
            n_train: 40,
            n_val: 5,
            n_test: 12,
            n_bias_attributes: 2,
            rho: 0.2,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn directory_roundtrip_preserves_metadata() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let m1 = write_dataset_dir(&ds, dir.path()).unwrap();
        let back = read_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.palettes, ds.palettes);
        assert_eq!(back.train.len(), ds.train.len());
        for (a, b) in back.train.iter().zip(&ds.train) {
            assert_eq!(a.target, b.target);
            assert_eq!(a.bias_values, b.bias_values);
            assert_eq!(a.aligned, b.aligned);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        // Same spec, second write: identical manifest checksum.
        let dir2 = tempfile::tempdir().unwrap();
        let m2 = write_dataset_dir(&tiny(), dir2.path()).unwrap();
        assert_eq!(m1.checksum(), m2.checksum());
    }

    #[test]
    fn corrupted_split_is_detected() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        write_dataset_dir(&ds, dir.path()).unwrap();
        let p = dir.path().join("val.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&p, bytes).unwrap();
        assert!(read_dataset_dir(dir.path()).is_err());
    }

    #[test]
    fn raw_dump_length_is_validated() {
        let ds = tiny();
        let mut raw = write_raw_split(&ds.test);
        raw.pop();
        assert!(read_raw_split(&raw, Path::new("t")).is_err());
    }
}
