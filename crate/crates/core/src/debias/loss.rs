use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, softmax};

/// Smallest probability fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

static CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// Number of times a zero target probability has been clamped to [`PROB_FLOOR`].
pub fn clamp_events() -> usize {
    CLAMPED.load(Ordering::Relaxed)
}

fn floor_prob(p: f64) -> f64 {
    if p < PROB_FLOOR {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        PROB_FLOOR
    } else {
        p
    }
}

/// Generalized cross-entropy parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GceConfig {
    pub alpha: f64,
}

impl Default for GceConfig {
    fn default() -> Self {
        Self { alpha: 0.7 }
    }
}

impl GceConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let cfg = Self { alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.alpha <= 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "GCE alpha must lie in (0, 1], got {}",
                self.alpha
            )))
        }
    }
}

/// `-ln p_target`.
pub fn ce_loss(probs: &[f64], target: usize) -> f64 {
    -floor_prob(probs[target]).ln()
}

/// Cross-entropy straight from logits via log-sum-exp.
pub fn ce_from_logits(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

/// `(1 - p^alpha) / alpha`, evaluated as `-expm1(alpha ln p) / alpha` so the
/// small-alpha limit stays accurate.
pub fn gce_loss(probs: &[f64], target: usize, cfg: GceConfig) -> f64 {
    let ln_p = floor_prob(probs[target]).ln();
    -(cfg.alpha * ln_p).exp_m1() / cfg.alpha
}

pub fn gce_from_logits(logits: &[f64], target: usize, cfg: GceConfig) -> f64 {
    let ln_p = -ce_from_logits(logits, target);
    -(cfg.alpha * ln_p).exp_m1() / cfg.alpha
}

/// `softmax(z) - e_y`.
pub fn ce_logit_grad(logits: &[f64], target: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[target] -= 1.0;
    g
}

/// GCE logit gradient: the CE gradient scaled by `p_y^alpha`.
pub fn gce_logit_grad(logits: &[f64], target: usize, cfg: GceConfig) -> Vec<f64> {
    let mut g = softmax(logits);
    let scale = g[target].powf(cfg.alpha);
    g[target] -= 1.0;
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    CrossEntropy,
    Gce(GceConfig),
}

impl Loss {
    pub fn value(&self, logits: &[f64], target: usize) -> f64 {
        match self {
            Loss::CrossEntropy => ce_from_logits(logits, target),
            Loss::Gce(cfg) => gce_from_logits(logits, target, *cfg),
        }
    }

    pub fn logit_grad(&self, logits: &[f64], target: usize) -> Vec<f64> {
        match self {
            Loss::CrossEntropy => ce_logit_grad(logits, target),
            Loss::Gce(cfg) => gce_logit_grad(logits, target, *cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_reference_values() {
        assert_eq!(ce_loss(&[0.0, 1.0], 1), 0.0);
        assert!((ce_loss(&[0.5, 0.5], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((ce_loss(&[0.1; 10], 3) - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ce_clamps_zero_probability() {
        let before = clamp_events();
        let v = ce_loss(&[1.0, 0.0], 1);
        assert!(v.is_finite());
        assert!((v - 300.0 * 10f64.ln()).abs() < 1e-9);
        assert!(clamp_events() > before);
    }

    #[test]
    fn ce_from_logits_is_stable() {
        let v = ce_from_logits(&[1000.0, 0.0], 1);
        assert!((v - 1000.0).abs() < 1e-9);
        assert!((ce_from_logits(&[0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gce_reference_values() {
        for a in [0.1, 0.7, 1.0] {
            assert_eq!(gce_loss(&[0.0, 1.0], 1, GceConfig { alpha: a }), 0.0);
        }
        let v = gce_loss(&[0.5, 0.5], 0, GceConfig { alpha: 0.7 });
        assert!((v - (1.0 - 0.5f64.powf(0.7)) / 0.7).abs() < 1e-15);
        let near_ce = gce_loss(&[0.5, 0.5], 0, GceConfig { alpha: 1e-8 });
        assert!((near_ce - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn alpha_outside_unit_interval_is_rejected() {
        assert!(GceConfig::new(0.0).is_err());
        assert!(GceConfig::new(1.2).is_err());
        assert!(GceConfig::new(1.0).is_ok());
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let logits = [0.3, -1.1, 2.0, 0.4];
        let eps = 1e-6;
        for loss in [
            Loss::CrossEntropy,
            Loss::Gce(GceConfig { alpha: 0.7 }),
            Loss::Gce(GceConfig { alpha: 0.2 }),
        ] {
            for target in 0..4 {
                let g = loss.logit_grad(&logits, target);
                for k in 0..4 {
                    let mut up = logits;
                    let mut dn = logits;
                    up[k] += eps;
                    dn[k] -= eps;
                    let fd = (loss.value(&up, target) - loss.value(&dn, target)) / (2.0 * eps);
                    assert!((fd - g[k]).abs() < 1e-8, "{loss:?} t={target} k={k}: {fd} vs {}", g[k]);
                }
            }
        }
    }
}
