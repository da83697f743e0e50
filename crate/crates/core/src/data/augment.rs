use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageSize;
use crate::seed;

/// Random rotation, integer translation and per-channel colour jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub enabled: bool,
    pub rotation_max_deg: f64,
    pub color_jitter: f64,
    pub translate_max_px: usize,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_max_deg: 10.0,
            color_jitter: 0.1,
            translate_max_px: 1,
        }
    }
}

impl AugmentationSpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.enabled || (self.rotation_max_deg == 0.0 && self.color_jitter == 0.0 && self.translate_max_px == 0)
    }
}

/// Augments a `channels × height × width` image. Labels are untouched by construction.
pub fn augment<R: Rng>(image: &[f64], size: ImageSize, spec: &AugmentationSpec, rng: &mut R) -> Vec<f64> {
    if spec.is_identity() {
        return image.to_vec();
    }
    let ImageSize {
        height: h,
        width: w,
        channels: ch,
    } = size;
    let angle = if spec.rotation_max_deg > 0.0 {
        rng.random_range(-spec.rotation_max_deg..=spec.rotation_max_deg)
            .to_radians()
    } else {
        0.0
    };
    let t = spec.translate_max_px as i64;
    let (tx, ty) = if t > 0 {
        (rng.random_range(-t..=t), rng.random_range(-t..=t))
    } else {
        (0, 0)
    };
    let offsets: Vec<f64> = if spec.color_jitter > 0.0 {
        (0..ch)
            .map(|_| rng.random_range(-spec.color_jitter..=spec.color_jitter))
            .collect()
    } else {
        vec![0.0; ch]
    };

    let (sin, cos) = angle.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo translation, then rotate back about the centre.
            let (ux, uy) = ((x as i64 - tx) as f64, (y as i64 - ty) as f64);
            let (sx, sy) = if angle == 0.0 {
                (ux, uy)
            } else {
                let (dx, dy) = (ux - cx, uy - cy);
                (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
            };
            let (sx, sy) = (sx.round(), sy.round());
            let inside = sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64;
            for c in 0..ch {
                let src = if inside {
                    image[c * h * w + sy as usize * w + sx as usize]
                } else {
                    0.0
                };
                out[c * h * w + y * w + x] = (src + offsets[c]).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// [`augment`] with randomness keyed by `(seed, epoch, slot)`.
pub fn augment_seeded(
    image: &[f64],
    size: ImageSize,
    spec: &AugmentationSpec,
    seed: u64,
    epoch: usize,
    slot: usize,
) -> Vec<f64> {
    if spec.is_identity() {
        return image.to_vec();
    }
    let mut rng = seed::indexed(seed::derive(seed, epoch as u64), seed::AUGMENT, slot as u64);
    augment(image, size, spec, &mut rng)
}
