//! On-disk run layout and JSON reports.
//!
//! A run directory holds:
//!
//! | file | content |
//! |------|---------|
//! | `report.json` | [`RunReport`]; byte-identical across reruns with the same seed |
//! | `timing.json` | wall-clock seconds, kept apart so the report stays deterministic |
//! | `config.toml` | the resolved [`ExperimentConfig`] |
//! | `model.ckpt` | final parameters |
//! | `biased.ckpt` | auxiliary model, when the method has one |
//! | `grad_norms.csv` | per-sample norms: `index,raw_norm,normalized_norm,target,aligned` |
//! | `sampling.json` | the sampling distribution `h`, when the method has one |
//!
//! Paths inside `report.json` are relative to the run directory.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{generate_biased_dataset, BiasedDataset, DatasetManifest};
use crate::debias::{norm_records_csv, SamplingDistribution};
use crate::error::{Error, Result};
use crate::fisher::{efi, shared_ridge, summarize, EfiSummary};
use crate::metrics::MetricReport;
use crate::nn::{read_checkpoint, write_checkpoint, ModelParams};
use crate::pipelines::{EpochRecord, Method, RunResult, Selection};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const BIASED_CHECKPOINT_FILE: &str = "biased.ckpt";
pub const NORMS_FILE: &str = "grad_norms.csv";
pub const SAMPLING_FILE: &str = "sampling.json";
pub const FISHER_FILE: &str = "fisher.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub config: String,
    pub checkpoint: String,
    pub biased_checkpoint: Option<String>,
    pub grad_norms_csv: Option<String>,
    pub sampling: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub config: ExperimentConfig,
    pub dataset_checksum: String,
    pub final_val: MetricReport,
    pub final_test: MetricReport,
    /// Best-validation checkpoint, evaluated on the test split.
    pub selected: Selection,
    pub biased_test: Option<MetricReport>,
    pub error_set_size: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub biased_history: Vec<EpochRecord>,
    pub files: RunFiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_secs: f64,
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|source| Error::Ingest {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
}

fn write_params(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn read_params(path: &Path) -> Result<ModelParams> {
    let f = File::open(path).map_err(|source| Error::Ingest {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(BufReader::new(f)).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format(path, detail),
        other => other,
    })
}

/// Writes every artifact of `result` into `dir` and returns the report.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, data: &BiasedDataset, result: &RunResult) -> Result<RunReport> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    write_params(&result.params, &dir.join(CHECKPOINT_FILE))?;
    if let Some(p) = &result.biased_params {
        write_params(p, &dir.join(BIASED_CHECKPOINT_FILE))?;
    }
    if !result.grad_norms.is_empty() {
        let targets: Vec<usize> = data.train.iter().map(|s| s.target).collect();
        let aligned: Vec<bool> = data.train.iter().map(|s| s.is_aligned()).collect();
        std::fs::write(
            dir.join(NORMS_FILE),
            norm_records_csv(&result.grad_norms, &targets, Some(&aligned)),
        )?;
    }
    if let Some(h) = &result.sampling {
        std::fs::write(dir.join(SAMPLING_FILE), json_bytes(h)?)?;
    }
    let report = build_report(cfg, data, result);
    std::fs::write(dir.join(REPORT_FILE), json_bytes(&report)?)?;
    std::fs::write(
        dir.join(TIMING_FILE),
        json_bytes(&Timing {
            wall_time_secs: result.wall_time_secs,
        })?,
    )?;
    Ok(report)
}

/// Serialized `report.json` of `result` as [`write_run`] would write it.
pub fn report_json(cfg: &ExperimentConfig, data: &BiasedDataset, result: &RunResult) -> Result<Vec<u8>> {
    json_bytes(&build_report(cfg, data, result))
}

fn run_files(result: &RunResult) -> RunFiles {
    RunFiles {
        config: CONFIG_FILE.to_string(),
        checkpoint: CHECKPOINT_FILE.to_string(),
        biased_checkpoint: result
            .biased_params
            .as_ref()
            .map(|_| BIASED_CHECKPOINT_FILE.to_string()),
        grad_norms_csv: (!result.grad_norms.is_empty()).then(|| NORMS_FILE.to_string()),
        sampling: result.sampling.as_ref().map(|_| SAMPLING_FILE.to_string()),
    }
}

fn build_report(cfg: &ExperimentConfig, data: &BiasedDataset, result: &RunResult) -> RunReport {
    RunReport {
        method: result.method,
        config: cfg.clone(),
        dataset_checksum: DatasetManifest::of(data).checksum(),
        final_val: result.final_val.clone(),
        final_test: result.final_test.clone(),
        selected: result.selected.clone(),
        biased_test: result.biased_test.clone(),
        error_set_size: result.error_set_size,
        history: result.history.clone(),
        biased_history: result.biased_history.clone(),
        files: run_files(result),
    }
}

pub fn read_report(dir: &Path) -> Result<RunReport> {
    read_json(&dir.join(REPORT_FILE))
}

/// A run directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub report: RunReport,
    pub params: ModelParams,
    pub sampling: Option<SamplingDistribution>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let report = read_report(dir)?;
    let params = read_params(&dir.join(&report.files.checkpoint))?;
    let sampling = match &report.files.sampling {
        Some(f) => Some(read_json(&dir.join(f))?),
        None => None,
    };
    Ok(LoadedRun {
        report,
        params,
        sampling,
    })
}

/// Regenerates the dataset a run was trained on and checks it against the report.
pub fn dataset_for(report: &RunReport, dir: &Path) -> Result<BiasedDataset> {
    let data = generate_biased_dataset(&report.config.data)?;
    if DatasetManifest::of(&data).checksum() != report.dataset_checksum {
        return Err(Error::format(
            dir.join(REPORT_FILE),
            "regenerated dataset does not match the recorded checksum",
        ));
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherRow {
    pub run: String,
    pub method: Method,
    /// `"h"` when the run's sampling distribution weights the matrix, else `"uniform"`.
    pub weighting: String,
    pub summary: EfiSummary,
}

/// Head-gradient EFI of several runs under one shared ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub ridge: f64,
    pub protocol: String,
    pub runs: Vec<FisherRow>,
}

pub const FISHER_PROTOCOL: &str = "EFI over classifier-head CE gradients on the training split, at each run's final \
     parameters, weighted by the run's sampling distribution (uniform if it has none); \
     ridge = 1e-6 x mean diagonal, pooled over all runs";

/// Fisher diagnostics for the given run directories.
pub fn fisher_report(dirs: &[&Path]) -> Result<FisherReport> {
    if dirs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let mut mats = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let run = load_run(dir)?;
        let data = dataset_for(&run.report, dir)?;
        let view = data.train_view();
        let (h, weighting) = match run.sampling {
            Some(h) => (h, "h"),
            None => (SamplingDistribution::uniform(view.len()), "uniform"),
        };
        let m = efi(&run.params, &view, &h)?;
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        mats.push((name, run.report.method, weighting, m));
    }
    let ridge = shared_ridge(&mats.iter().map(|m| &m.3).collect::<Vec<_>>());
    let runs = mats
        .into_iter()
        .map(|(run, method, weighting, m)| {
            Ok(FisherRow {
                run,
                method,
                weighting: weighting.to_string(),
                summary: summarize(&m.with_ridge(ridge))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FisherReport {
        ridge,
        protocol: FISHER_PROTOCOL.to_string(),
        runs,
    })
}

pub fn write_fisher_report(report: &FisherReport, path: &Path) -> Result<()> {
    std::fs::write(path, json_bytes(report)?)?;
    Ok(())
}
