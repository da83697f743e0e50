//! End-to-end training procedures: vanilla ERM, three-step gradient-norm
//! debiasing and its ablations, JTT and LfF.

mod engine;
mod methods;

pub use engine::{init_params, StageRunner};
pub use methods::{
    debias_from_biased, gce_alpha_sweep, train_biased, train_continuation, train_jtt, train_lff, train_loss_resample,
    train_method, train_pgd, train_pgd_reweight, train_pgd_single_stage, train_pgd_step3, train_vanilla, BiasedStage,
    Scoring, Step3Mode,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::AugmentationSpec;
use crate::debias::{GceConfig, GradNormRecord, GradScope, NormSpec, SamplingDistribution};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::nn::{ModelParams, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    Pgd,
    PgdSingleStage,
    PgdReweight,
    LossResample,
    Jtt,
    Lff,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Vanilla,
        Method::Pgd,
        Method::PgdSingleStage,
        Method::PgdReweight,
        Method::LossResample,
        Method::Jtt,
        Method::Lff,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Pgd => "pgd",
            Method::PgdSingleStage => "pgd-single-stage",
            Method::PgdReweight => "pgd-reweight",
            Method::LossResample => "loss-resample",
            Method::Jtt => "jtt",
            Method::Lff => "lff",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Loss of the auxiliary biased model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasedLoss {
    #[default]
    Gce,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Step-1 epochs (biased model); also the first stage of JTT.
    pub epochs_biased: usize,
    /// Step-3 epochs (debiased model). Single-stage runs this many rounds.
    pub epochs_debiased: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    pub gce: GceConfig,
    pub biased_loss: BiasedLoss,
    pub norm: NormSpec,
    pub grad_scope: GradScope,
    pub augmentation: AugmentationSpec,
    pub seed: u64,
    pub inherit_params: bool,
    pub hidden: Vec<usize>,
    /// Weight of the biased-model GCE term in LfF.
    pub lff_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_biased: 15,
            epochs_debiased: 15,
            batch_size: 128,
            optimizer: SgdConfig::default(),
            gce: GceConfig::default(),
            biased_loss: BiasedLoss::Gce,
            norm: NormSpec::default(),
            grad_scope: GradScope::FinalLayer,
            augmentation: AugmentationSpec::default(),
            seed: 0,
            inherit_params: true,
            hidden: vec![64, 64],
            lff_lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.norm.r > 0.0) {
            return Err(Error::Config("norm exponent r must be positive".into()));
        }
        if !(self.lff_lambda >= 0.0) {
            return Err(Error::Config("lff_lambda must be non-negative".into()));
        }
        self.gce.validate()?;
        self.optimizer.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_biased + self.epochs_debiased
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JttConfig {
    /// Upweighting factor; `None` means `1 / rho` of the training split.
    pub lambda_up: Option<f64>,
}

impl JttConfig {
    pub fn resolve(&self, rho: f64) -> Result<f64> {
        let l = self.lambda_up.unwrap_or(1.0 / rho);
        if l >= 1.0 && l.is_finite() {
            Ok(l)
        } else {
            Err(Error::Config(format!("lambda_up must be >= 1, got {l}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    Biased,
    Debiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub overall: f64,
    pub aligned: Option<f64>,
    pub conflicting: Option<f64>,
    pub worst_group: f64,
}

impl From<&MetricReport> for SplitSummary {
    fn from(r: &MetricReport) -> Self {
        Self {
            overall: r.overall,
            aligned: r.aligned,
            conflicting: r.conflicting,
            worst_group: r.worst_group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: StageKind,
    pub mean_loss: f64,
    pub train: SplitSummary,
    pub val: SplitSummary,
    pub test: SplitSummary,
}

/// Model picked by best validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: Option<usize>,
    pub val_overall: f64,
    pub test: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub method: Method,
    #[serde(skip)]
    pub params: ModelParams,
    /// Per-epoch metrics of the final model's own training.
    pub history: Vec<EpochRecord>,
    pub biased_history: Vec<EpochRecord>,
    pub final_val: MetricReport,
    pub final_test: MetricReport,
    pub selected: Selection,
    pub biased_test: Option<MetricReport>,
    #[serde(skip)]
    pub biased_params: Option<ModelParams>,
    pub grad_norms: Vec<GradNormRecord>,
    #[serde(skip)]
    pub sampling: Option<SamplingDistribution>,
    #[serde(skip)]
    pub sample_weights: Option<Vec<f64>>,
    pub error_set_size: Option<usize>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[cfg(not(target_arch = "wasm32"))]
pub(crate) struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    pub fn start() -> Self {
        Self(std::time::Instant::now())
    }

    pub fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(target_arch = "wasm32")]
pub(crate) struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch
    }

    pub fn secs(&self) -> f64 {
        0.0
    }
}
