use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::TrainView;
use crate::error::Result;
use crate::nn::{backward, forward_batch, softmax, ForwardTrace, ModelParams};

use super::loss::ce_from_logits;

const NORM_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Inf,
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormOrder::L1 => "1",
            NormOrder::L2 => "2",
            NormOrder::Inf => "inf",
        })
    }
}

impl std::str::FromStr for NormOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(NormOrder::L1),
            "2" | "l2" => Ok(NormOrder::L2),
            "inf" | "linf" => Ok(NormOrder::Inf),
            other => Err(format!("unknown norm order {other:?} (expected 1, 2 or inf)")),
        }
    }
}

/// `||g||_s^r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormSpec {
    pub s: NormOrder,
    pub r: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        Self {
            s: NormOrder::L2,
            r: 1.0,
        }
    }
}

/// Which parameters enter the per-sample gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradScope {
    #[default]
    FinalLayer,
    AllLayers,
}

/// CE gradient of the classifier head for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FcGrad {
    /// `c × h`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FcGrad {
    /// Weights then bias, the layout used for norms and Fisher matrices.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.weight.clone();
        v.extend_from_slice(&self.bias);
        v
    }
}

/// Head gradient of CE for sample `b` of a trace: `(p - e_y) z^T` and `p - e_y`.
pub fn fc_gradient(trace: &ForwardTrace, b: usize, target: usize) -> FcGrad {
    let mut residual = softmax(trace.logits(b));
    residual[target] -= 1.0;
    let z = trace.feature(b);
    let mut weight = Vec::with_capacity(residual.len() * z.len());
    for &r in &residual {
        weight.extend(z.iter().map(|&zv| r * zv));
    }
    FcGrad { weight, bias: residual }
}

pub fn vector_norm(v: &[f64], spec: NormSpec) -> f64 {
    let base = match spec.s {
        NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::Inf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
    };
    powr(base, spec.r)
}

fn powr(base: f64, r: f64) -> f64 {
    if r == 1.0 {
        base
    } else if r == 2.0 {
        base * base
    } else {
        base.powf(r)
    }
}

/// Entrywise norm of the concatenated (weight, bias) gradient.
pub fn grad_norm(grad: &FcGrad, spec: NormSpec) -> f64 {
    vector_norm(&grad.flatten(), spec)
}

/// Norm of the outer-product head gradient from its two factors, without
/// materializing the `c × (h + 1)` matrix.
pub fn factorized_norm(residual: &[f64], feature: &[f64], spec: NormSpec) -> f64 {
    let base = match spec.s {
        NormOrder::L1 => {
            let r: f64 = residual.iter().map(|x| x.abs()).sum();
            let z: f64 = feature.iter().map(|x| x.abs()).sum();
            r * (z + 1.0)
        }
        NormOrder::L2 => {
            let r: f64 = residual.iter().map(|x| x * x).sum();
            let z: f64 = feature.iter().map(|x| x * x).sum();
            (r * (z + 1.0)).sqrt()
        }
        NormOrder::Inf => {
            let r = residual.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let z = feature.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            r * z.max(1.0)
        }
    };
    powr(base, spec.r)
}

/// Raw per-sample CE gradient norms in index order, computed on un-augmented images.
pub fn per_sample_grad_norms(
    params: &ModelParams,
    view: &TrainView<'_>,
    spec: NormSpec,
    scope: GradScope,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(view.len());
    match scope {
        GradScope::FinalLayer => {
            for start in (0..view.len()).step_by(NORM_CHUNK) {
                let end = (start + NORM_CHUNK).min(view.len());
                let trace = forward_batch(params, &view.images()[start..end])?;
                for b in 0..end - start {
                    let mut residual = softmax(trace.logits(b));
                    residual[view.target(start + b)] -= 1.0;
                    out.push(factorized_norm(&residual, trace.feature(b), spec));
                }
            }
        }
        GradScope::AllLayers => {
            for i in 0..view.len() {
                let trace = forward_batch(params, &[view.image(i)])?;
                let mut residual = softmax(trace.logits(0));
                residual[view.target(i)] -= 1.0;
                let grads = backward(params, &trace, &residual)?;
                out.push(vector_norm(&grads.flatten(), spec));
            }
        }
    }
    Ok(out)
}

/// Per-sample CE loss in index order.
pub fn per_sample_losses(params: &ModelParams, view: &TrainView<'_>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(view.len());
    for start in (0..view.len()).step_by(NORM_CHUNK) {
        let end = (start + NORM_CHUNK).min(view.len());
        let trace = forward_batch(params, &view.images()[start..end])?;
        for b in 0..end - start {
            out.push(ce_from_logits(trace.logits(b), view.target(start + b)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNormRecord {
    pub index: usize,
    pub raw_norm: f64,
    /// `raw_norm / max(raw_norm)` over the dataset.
    pub normalized_norm: f64,
}

pub fn norm_records(raw: &[f64]) -> Vec<GradNormRecord> {
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    raw.iter()
        .enumerate()
        .map(|(index, &raw_norm)| GradNormRecord {
            index,
            raw_norm,
            normalized_norm: if max > 0.0 { raw_norm / max } else { 0.0 },
        })
        .collect()
}

/// CSV with columns `index,raw_norm,normalized_norm,target[,aligned]`.
/// The alignment column is only written for evaluation exports.
pub fn norm_records_csv(records: &[GradNormRecord], targets: &[usize], aligned: Option<&[bool]>) -> String {
    let mut out = String::from("index,raw_norm,normalized_norm,target");
    if aligned.is_some() {
        out.push_str(",aligned");
    }
    out.push('\n');
    for rec in records {
        out.push_str(&format!(
            "{},{},{},{}",
            rec.index, rec.raw_norm, rec.normalized_norm, targets[rec.index]
        ));
        if let Some(a) = aligned {
            out.push_str(if a[rec.index] { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::debias::ce_from_logits;
    use crate::nn::{forward, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_specs() -> Vec<NormSpec> {
        let mut v = Vec::new();
        for s in [NormOrder::L1, NormOrder::L2, NormOrder::Inf] {
            for r in [1.0, 2.0, 0.5] {
                v.push(NormSpec { s, r });
            }
        }
        v
    }

    #[test]
    fn zero_gradient_has_zero_norm() {
        let g = FcGrad {
            weight: vec![0.0; 6],
            bias: vec![0.0; 2],
        };
        for spec in all_specs() {
            assert_eq!(grad_norm(&g, spec), 0.0);
        }
    }

    #[test]
    fn pythagorean() {
        let v = [3.0, 4.0];
        assert_eq!(
            vector_norm(
                &v,
                NormSpec {
                    s: NormOrder::L2,
                    r: 1.0
                }
            ),
            5.0
        );
        assert_eq!(
            vector_norm(
                &v,
                NormSpec {
                    s: NormOrder::L2,
                    r: 2.0
                }
            ),
            25.0
        );
    }

    #[test]
    fn two_class_half_half() {
        // p = (0.5, 0.5), y = 0, z = (1): ||p - e_y||_2 * sqrt(||z||^2 + 1) = 1.
        let n = factorized_norm(&[-0.5, 0.5], &[1.0], NormSpec::default());
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let layer = crate::nn::Dense::new(
            Tensor::new(vec![2, 1], vec![1000.0, -1000.0]).unwrap(),
            Tensor::zeros(vec![2]),
            crate::nn::Activation::Identity,
        )
        .unwrap();
        let p = ModelParams::new(vec![layer]).unwrap();
        let tr = forward(&p, &Tensor::from_vec(vec![1.0])).unwrap();
        let g = fc_gradient(&tr, 0, 0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factorized_matches_entrywise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let c = rng.random_range(2..8);
            let h = rng.random_range(1..12);
            let residual: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..h).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut weight = Vec::new();
            for &r in &residual {
                weight.extend(z.iter().map(|&zv| r * zv));
            }
            let g = FcGrad {
                weight,
                bias: residual.clone(),
            };
            for spec in all_specs() {
                let a = factorized_norm(&residual, &z, spec);
                let b = grad_norm(&g, spec);
                assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{spec:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn fc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::mlp(5, &[6], 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tr = forward(&params, &Tensor::from_vec(x.clone())).unwrap();
        let g = fc_gradient(&tr, 0, 2).flatten();
        let head_offset = params.num_params() - g.len();
        let eps = 1e-6;
        for (k, &gk) in g.iter().enumerate() {
            let mut up = params.clone();
            *up.param_mut(head_offset + k) += eps;
            let mut dn = params.clone();
            *dn.param_mut(head_offset + k) -= eps;
            let f = |p: &ModelParams| ce_from_logits(forward(p, &Tensor::from_vec(x.clone())).unwrap().logits(0), 2);
            let fd = (f(&up) - f(&dn)) / (2.0 * eps);
            assert!((fd - gk).abs() <= 1e-6 * gk.abs().max(1e-3), "param {k}: {fd} vs {gk}");
        }
    }

    #[test]
    fn records_normalize_by_max() {
        let recs = norm_records(&[1.0, 4.0, 2.0]);
        assert_eq!(recs[1].normalized_norm, 1.0);
        assert_eq!(recs[0].normalized_norm, 0.25);
        let csv = norm_records_csv(&recs, &[0, 1, 2], None);
        assert!(csv.starts_with("index,raw_norm,normalized_norm,target\n"));
        assert!(!csv.contains("aligned"));
        let csv = norm_records_csv(&recs, &[0, 1, 2], Some(&[true, false, true]));
        assert!(csv.lines().nth(2).unwrap().ends_with(",0"));
    }

    #[test]
    fn norm_order_parses() {
        assert_eq!("inf".parse::<NormOrder>().unwrap(), NormOrder::Inf);
        assert_eq!("L1".parse::<NormOrder>().unwrap(), NormOrder::L1);
        assert!("3".parse::<NormOrder>().is_err());
    }
}
