//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations are exposed: the two-group toy objective, a preview of
//! the colored training images, and the gradient-norm histogram of a biased
//! model trained in the browser.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use pgd_core::data::{generate_biased_dataset, AugmentationSpec, DatasetSpec};
use pgd_core::debias::{norm_records, per_sample_grad_norms};
use pgd_core::fisher::{toy_erm, toy_optimal_h, ToyProblem};
use pgd_core::metrics::{auroc, evaluate, norm_histogram};
use pgd_core::pipelines::{train_biased, TrainConfig};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyCurve {
    /// Majority mass `|M| h_M` at each point.
    pub mass: Vec<f64>,
    pub trace_inverse: Vec<f64>,
    pub theta_uniform: f64,
    pub h_major: f64,
    pub h_minor: f64,
}

/// Objective over `points` interior masses plus the closed-form optimum.
pub fn toy_curve_data(size_major: usize, size_minor: usize, a: f64, points: usize) -> pgd_core::Result<ToyCurve> {
    let prob = ToyProblem::new(size_major, size_minor, a)?;
    let points = points.max(3);
    let mass: Vec<f64> = (1..=points).map(|k| k as f64 / (points + 1) as f64).collect();
    let (h_major, h_minor) = toy_optimal_h(&prob);
    Ok(ToyCurve {
        trace_inverse: mass.iter().map(|&t| prob.objective(t)).collect(),
        mass,
        theta_uniform: toy_erm(&prob).theta,
        h_major,
        h_minor,
    })
}

#[wasm_bindgen]
pub fn toy_curve(size_major: usize, size_minor: usize, a: f64, points: usize) -> Result<String, JsError> {
    let curve = toy_curve_data(size_major, size_minor, a, points).map_err(js_err)?;
    serde_json::to_string(&curve).map_err(js_err)
}

fn preview_spec(rho: f64, seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_train: 600,
        n_val: 0,
        n_test: 1,
        rho,
        seed,
        ..Default::default()
    }
}

/// RGBA grid of training images, one row per class.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Preview {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Preview {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// First `per_class` training samples of each class, upscaled by `scale`;
/// bias-conflicting samples get a red frame.
pub fn preview_data(rho: f64, seed: u64, per_class: usize, scale: usize) -> pgd_core::Result<Preview> {
    let ds = generate_biased_dataset(&preview_spec(rho, seed))?;
    let size = ds.spec.image_size;
    let (h, w) = (size.height, size.width);
    let scale = scale.max(1);
    let cell_w = w * scale + 2;
    let cell_h = h * scale + 2;
    let width = per_class * cell_w;
    let height = ds.spec.n_classes * cell_h;
    let mut rgba = vec![0u8; width * height * 4];
    for class in 0..ds.spec.n_classes {
        let picks = ds.train.iter().filter(|s| s.target == class).take(per_class);
        for (col, s) in picks.enumerate() {
            let (x0, y0) = (col * cell_w, class * cell_h);
            let frame = if s.is_aligned() { [40, 40, 40] } else { [230, 30, 30] };
            for y in 0..cell_h {
                for x in 0..cell_w {
                    let border = x == 0 || y == 0 || x == cell_w - 1 || y == cell_h - 1;
                    let px = ((y0 + y) * width + x0 + x) * 4;
                    let rgb = if border {
                        frame
                    } else {
                        let (iy, ix) = ((y - 1) / scale, (x - 1) / scale);
                        let img = s.image.data();
                        let c = |ch: usize| (img[(ch * h + iy) * w + ix].clamp(0.0, 1.0) * 255.0).round() as u8;
                        [c(0), c(1), c(2)]
                    };
                    rgba[px..px + 3].copy_from_slice(&rgb);
                    rgba[px + 3] = 255;
                }
            }
        }
    }
    Ok(Preview {
        width: width as u32,
        height: height as u32,
        rgba,
    })
}

#[wasm_bindgen]
pub fn dataset_preview(rho: f64, seed: u64, per_class: usize, scale: usize) -> Result<Preview, JsError> {
    preview_data(rho, seed, per_class, scale).map_err(js_err)
}

#[derive(Debug, Clone, Serialize)]
pub struct NormSummary {
    pub edges: Vec<f64>,
    pub aligned: Vec<usize>,
    pub conflicting: Vec<usize>,
    pub auroc: f64,
    pub mean_aligned: f64,
    pub mean_conflicting: f64,
    pub biased_test_accuracy: f64,
}

/// Trains a small GCE model and histograms its normalized per-sample gradient norms.
pub fn histogram_data(rho: f64, seed: u64, n_train: usize, epochs: usize, alpha: f64) -> pgd_core::Result<NormSummary> {
    let ds = generate_biased_dataset(&DatasetSpec {
        n_train,
        n_test: 500,
        ..preview_spec(rho, seed)
    })?;
    let mut cfg = TrainConfig {
        epochs_biased: epochs,
        epochs_debiased: 0,
        hidden: vec![32],
        augmentation: AugmentationSpec::disabled(),
        seed,
        ..TrainConfig::default()
    };
    cfg.gce.alpha = alpha;
    let biased = train_biased(&ds, &cfg)?;
    let raw = per_sample_grad_norms(&biased.params, &ds.train_view(), cfg.norm, cfg.grad_scope)?;
    let normalized: Vec<f64> = norm_records(&raw).iter().map(|r| r.normalized_norm).collect();
    let aligned: Vec<bool> = ds.train.iter().map(|s| s.is_aligned()).collect();
    let hist = norm_histogram(&normalized, &aligned);
    let (mut c, mut a) = (Vec::new(), Vec::new());
    for (v, &al) in normalized.iter().zip(&aligned) {
        if al {
            a.push(*v)
        } else {
            c.push(*v)
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(NormSummary {
        edges: hist.edges,
        aligned: hist.aligned,
        conflicting: hist.conflicting,
        auroc: if a.is_empty() || c.is_empty() {
            f64::NAN
        } else {
            auroc(&c, &a)
        },
        mean_aligned: mean(&a),
        mean_conflicting: mean(&c),
        biased_test_accuracy: evaluate(&biased.params, &ds.test, None)?.overall,
    })
}

#[wasm_bindgen]
pub fn gradnorm_histogram(rho: f64, seed: u64, n_train: usize, epochs: usize, alpha: f64) -> Result<String, JsError> {
    let summary = histogram_data(rho, seed, n_train, epochs, alpha).map_err(js_err)?;
    serde_json::to_string(&summary).map_err(js_err)
}
