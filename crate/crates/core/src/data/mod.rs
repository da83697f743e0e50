//! Synthetic biased datasets in the Colored-MNIST style.
//!
//! Each class owns a designated colour per bias attribute. A sample is
//! bias-conflicting on an attribute with probability `rho`, in which case the
//! colour of a different, uniformly chosen class is used instead. Attribute 0
//! colours the glyph strokes; attribute 1 (multi-bias) tints the background.

mod augment;
mod generate;
mod glyph;
mod idx;
mod store;

pub use augment::{augment, augment_seeded, AugmentationSpec};
pub use generate::{generate_biased_dataset, UNBIASED_RHO};
pub use glyph::segment_mask;
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IdxDigits, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub(crate) use store::hex;
pub use store::{
    read_dataset_dir, read_raw_split, split_checksum, write_dataset_dir, write_raw_split, DatasetManifest, RAW_MAGIC,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageSize {
    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Procedural,
    /// Directory holding the four standard MNIST IDX files.
    ExternalIdx {
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_classes: usize,
    /// Fraction of bias-conflicting training samples, per attribute.
    pub rho: f64,
    pub n_bias_attributes: usize,
    /// Standard deviation of the per-channel Gaussian colour jitter.
    pub color_sigma: f64,
    pub image_size: ImageSize,
    pub seed: u64,
    pub source: DataSource,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_val: 1_000,
            n_test: 2_000,
            n_classes: 10,
            rho: 0.01,
            n_bias_attributes: 1,
            color_sigma: 0.01,
            image_size: ImageSize {
                height: 16,
                width: 16,
                channels: 3,
            },
            seed: 0,
            source: DataSource::Procedural,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.n_bias_attributes == 0 || self.n_bias_attributes > 2 {
            return Err(Error::Config(
                "n_bias_attributes must be 1 (stroke colour) or 2 (stroke + background colour)".into(),
            ));
        }
        if !(self.color_sigma >= 0.0) {
            return Err(Error::Config("color_sigma must be non-negative".into()));
        }
        if self.image_size.channels != 3 || self.image_size.height < 8 || self.image_size.width < 8 {
            return Err(Error::Config("images must be RGB and at least 8x8".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("train and test splits must be non-empty".into()));
        }
        Ok(())
    }
}

/// One image with its label and hidden bias metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    /// `channels × height × width`.
    pub image: Tensor,
    pub target: usize,
    pub bias_values: Vec<usize>,
    pub aligned: Vec<bool>,
}

impl LabeledSample {
    /// Aligned on every bias attribute.
    pub fn is_aligned(&self) -> bool {
        self.aligned.iter().all(|&a| a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedDataset {
    pub spec: DatasetSpec,
    /// `palettes[attribute][class]` RGB colour in `[0, 1]`.
    pub palettes: Vec<Vec<[f64; 3]>>,
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Read-only training view: images and targets only. Alignment metadata is
/// not reachable from here, so training code cannot depend on it.
#[derive(Debug, Clone)]
pub struct TrainView<'a> {
    images: Vec<&'a [f64]>,
    targets: Vec<usize>,
    image_size: ImageSize,
}

impl<'a> TrainView<'a> {
    pub fn new(samples: &'a [LabeledSample], image_size: ImageSize) -> Self {
        Self {
            images: samples.iter().map(|s| s.image.data()).collect(),
            targets: samples.iter().map(|s| s.target).collect(),
            image_size,
        }
    }

    pub fn from_parts(images: Vec<&'a [f64]>, targets: Vec<usize>, image_size: ImageSize) -> Self {
        assert_eq!(images.len(), targets.len());
        Self {
            images,
            targets,
            image_size,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn image(&self, i: usize) -> &'a [f64] {
        self.images[i]
    }

    pub fn images(&self) -> &[&'a [f64]] {
        &self.images
    }

    pub fn target(&self, i: usize) -> usize {
        self.targets[i]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn image_size(&self) -> ImageSize {
        self.image_size
    }

    /// New view where `extra` indices are appended after the original samples.
    pub fn with_repeats(&self, extra: &[usize]) -> TrainView<'a> {
        let mut images = self.images.clone();
        let mut targets = self.targets.clone();
        for &i in extra {
            images.push(self.images[i]);
            targets.push(self.targets[i]);
        }
        TrainView {
            images,
            targets,
            image_size: self.image_size,
        }
    }
}

impl BiasedDataset {
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView::new(&self.train, self.spec.image_size)
    }
}

/// Partition by alignment on all attributes: `(aligned, conflicting)`.
pub fn split_by_alignment(samples: &[LabeledSample]) -> (Vec<&LabeledSample>, Vec<&LabeledSample>) {
    samples.iter().partition(|s| s.is_aligned())
}
