//! Sweeps over (method, rho, norm, seed) cells with resumable per-cell output.
//!
//! Layout under the plan's output directory:
//!
//! ```text
//! cells/<cell id>/            run directory (see `report`) plus cell.json
//! aggregate.csv               one row per (method, rho, norm), statistics over seeds
//! failures.json               cells that returned an error
//! ```
//!
//! `acc_std` is the sample standard deviation (n - 1 denominator); it is 0
//! when only one seed completed. `efi_trace_inv` uses a single ridge pooled
//! over every cell of the plan, so the column is comparable across rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::config::ExperimentConfig;
use crate::data::{generate_biased_dataset, hex};
use crate::debias::{NormSpec, SamplingDistribution};
use crate::error::{Error, Result};
use crate::fisher::{efi, trace_inverse_from_eigenvalues, RIDGE_FRACTION};
use crate::metrics::MetricReport;
use crate::pipelines::{train_method, Method};
use crate::report::write_run;

pub const CELL_FILE: &str = "cell.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FAILURES_FILE: &str = "failures.json";
pub const AGGREGATE_HEADER: &str = "method,rho,norm_s,norm_r,seed_count,acc_mean,acc_std,aligned_acc_mean,\
conflicting_acc_mean,worst_group_mean,efi_trace_inv";

/// Grid section of a plan file (`[plan]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanGrid {
    pub methods: Vec<Method>,
    /// Defaults to the base config's `rho`.
    #[serde(default)]
    pub rhos: Option<Vec<f64>>,
    /// Defaults to the base config's norm. Only methods that score samples by
    /// gradient norm iterate over this grid.
    #[serde(default)]
    pub norms: Option<Vec<NormSpec>>,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Seed of repeat `k` is `seed + k`; defaults to the base config's seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Compute the head-gradient Fisher spectrum of every cell.
    #[serde(default = "yes")]
    pub fisher: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/sweep")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub methods: Vec<Method>,
    pub rhos: Vec<f64>,
    pub norms: Vec<NormSpec>,
    pub repeats: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub fisher: bool,
    pub base: ExperimentConfig,
}

impl ExperimentPlan {
    /// Parses a plan file: a `[plan]` table plus the usual config sections.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let grid = table
            .remove("plan")
            .ok_or_else(|| Error::Config("plan file needs a [plan] section".into()))?;
        let grid: PlanGrid = match grid {
            Value::Table(t) => Value::Table(t)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("[plan]: {e}")))?,
            _ => return Err(Error::Config("plan must be a table".into())),
        };
        let base = ExperimentConfig::from_table(table)?;
        let plan = Self {
            methods: grid.methods,
            rhos: grid.rhos.unwrap_or_else(|| vec![base.data.rho]),
            norms: grid.norms.unwrap_or_else(|| vec![base.train.norm]),
            repeats: grid.repeats,
            seed: grid.seed.unwrap_or(base.train.seed),
            out: grid.out,
            fisher: grid.fisher,
            base,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Ingest {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(detail) => Error::format(path, detail),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.rhos.is_empty() || self.norms.is_empty() {
            return Err(Error::Config("plan grids must be non-empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        self.base.validate()?;
        for cell in self.cells() {
            cell.config.validate()?;
        }
        Ok(())
    }

    /// Every cell, in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            let norms: Vec<Option<NormSpec>> = if uses_norm(method) {
                self.norms.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for &rho in &self.rhos {
                for norm in &norms {
                    for k in 0..self.repeats as u64 {
                        let seed = self.seed + k;
                        let mut config = self.base.clone();
                        config.data.rho = rho;
                        config.data.seed = seed;
                        config.train.seed = seed;
                        if let Some(n) = norm {
                            config.train.norm = *n;
                        }
                        out.push(Cell {
                            id: cell_id(method, rho, *norm, seed),
                            method,
                            rho,
                            norm: *norm,
                            seed,
                            config,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Methods whose result depends on the gradient norm.
pub fn uses_norm(method: Method) -> bool {
    matches!(method, Method::Pgd | Method::PgdSingleStage | Method::PgdReweight)
}

fn cell_id(method: Method, rho: f64, norm: Option<NormSpec>, seed: u64) -> String {
    match norm {
        Some(n) => format!("{}_rho{rho}_s{}_r{}_seed{seed}", method.name(), n.s, n.r),
        None => format!("{}_rho{rho}_seed{seed}", method.name()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub method: Method,
    pub rho: f64,
    pub norm: Option<NormSpec>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Cell {
    pub fn checksum(&self) -> Result<String> {
        let text = format!("method = \"{}\"\n{}", self.method.name(), self.config.to_toml_string()?);
        Ok(hex(&Sha256::digest(text.as_bytes())))
    }
}

/// Spectrum kept per cell so the trace-inverse can be taken under a pooled ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfiSpectrum {
    pub mean_diagonal: f64,
    pub eigenvalues: Vec<f64>,
}

/// Per-cell summary written as `cell.json`; its presence with a matching
/// checksum marks the cell complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: String,
    pub method: Method,
    pub rho: f64,
    pub norm: Option<NormSpec>,
    pub seed: u64,
    pub config_checksum: String,
    pub final_test: MetricReport,
    pub selected_test_overall: f64,
    pub efi: Option<EfiSpectrum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: usize,
    /// Stop picking up new cells after this many have run in this invocation.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct PlanOutcome {
    /// Completed cells in plan order, whether run now or resumed.
    pub records: Vec<CellRecord>,
    pub executed: usize,
    pub skipped: usize,
    /// Cells not attempted because of `stop_after`.
    pub pending: usize,
    pub failures: Vec<CellFailure>,
}

impl PlanOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty() && self.pending == 0
    }
}

fn cell_dir(out: &Path, cell: &Cell) -> PathBuf {
    out.join("cells").join(&cell.id)
}

fn completed(dir: &Path, checksum: &str) -> Option<CellRecord> {
    let text = std::fs::read_to_string(dir.join(CELL_FILE)).ok()?;
    let rec: CellRecord = serde_json::from_str(&text).ok()?;
    (rec.config_checksum == checksum).then_some(rec)
}

fn run_cell(cell: &Cell, dir: &Path, checksum: String, fisher: bool) -> Result<CellRecord> {
    let data = generate_biased_dataset(&cell.config.data)?;
    let result = train_method(cell.method, &data, &cell.config.train, &cell.config.jtt)?;
    write_run(dir, &cell.config, &data, &result)?;
    let spectrum = if fisher {
        let view = data.train_view();
        let h = result
            .sampling
            .clone()
            .unwrap_or_else(|| SamplingDistribution::uniform(view.len()));
        let m = efi(&result.params, &view, &h)?;
        let spectrum = EfiSpectrum {
            mean_diagonal: m.mean_diagonal(),
            eigenvalues: m.eigenvalues()?,
        };
        // A run can finish with finite losses yet overflow here; that cell is a failure, not a data point.
        if !spectrum.mean_diagonal.is_finite() || spectrum.eigenvalues.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite Fisher spectrum for cell {}",
                cell.id
            )));
        }
        Some(spectrum)
    } else {
        None
    };
    let rec = CellRecord {
        id: cell.id.clone(),
        method: cell.method,
        rho: cell.rho,
        norm: cell.norm,
        seed: cell.seed,
        config_checksum: checksum,
        final_test: result.final_test,
        selected_test_overall: result.selected.test.overall,
        efi: spectrum,
    };
    let mut bytes = serde_json::to_vec_pretty(&rec)?;
    bytes.push(b'\n');
    std::fs::write(dir.join(CELL_FILE), bytes)?;
    Ok(rec)
}

/// Runs every cell not already complete, then writes the aggregate CSV.
pub fn run_plan(plan: &ExperimentPlan, opts: &RunOptions) -> Result<PlanOutcome> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.out)?;
    let cells = plan.cells();
    let slots: Vec<Mutex<Option<std::result::Result<CellRecord, String>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let mut todo = Vec::new();
    let mut skipped = 0;
    for (i, cell) in cells.iter().enumerate() {
        let sum = cell.checksum()?;
        match completed(&cell_dir(&plan.out, cell), &sum) {
            Some(rec) => {
                info!("{}: complete, skipping", cell.id);
                *slots[i].lock().unwrap() = Some(Ok(rec));
                skipped += 1;
            }
            None => todo.push((i, sum)),
        }
    }
    let limit = opts.stop_after.unwrap_or(usize::MAX).min(todo.len());
    let pending = todo.len() - limit;
    let next = AtomicUsize::new(0);
    let threads = opts.threads.max(1).min(limit.max(1));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= limit {
                    break;
                }
                let (i, sum) = &todo[k];
                let cell = &cells[*i];
                info!("{}: running", cell.id);
                let r = run_cell(cell, &cell_dir(&plan.out, cell), sum.clone(), plan.fisher);
                if let Err(e) = &r {
                    warn!("{}: failed: {e}", cell.id);
                }
                *slots[*i].lock().unwrap() = Some(r.map_err(|e| e.to_string()));
            });
        }
    });
    let mut outcome = PlanOutcome {
        executed: limit,
        skipped,
        pending,
        ..Default::default()
    };
    for (cell, slot) in cells.iter().zip(slots) {
        match slot.into_inner().unwrap() {
            Some(Ok(rec)) => outcome.records.push(rec),
            Some(Err(error)) => outcome.failures.push(CellFailure {
                id: cell.id.clone(),
                error,
            }),
            None => {}
        }
    }
    std::fs::write(plan.out.join(AGGREGATE_FILE), aggregate_csv(&outcome.records)?)?;
    let mut bytes = serde_json::to_vec_pretty(&outcome.failures)?;
    bytes.push(b'\n');
    std::fs::write(plan.out.join(FAILURES_FILE), bytes)?;
    Ok(outcome)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Aggregate CSV over completed cells, grouped by (method, rho, norm).
pub fn aggregate_csv(records: &[CellRecord]) -> Result<String> {
    let spectra: Vec<&EfiSpectrum> = records.iter().filter_map(|r| r.efi.as_ref()).collect();
    let ridge = if spectra.is_empty() {
        0.0
    } else {
        RIDGE_FRACTION * spectra.iter().map(|s| s.mean_diagonal).sum::<f64>() / spectra.len() as f64
    };
    let mut groups: BTreeMap<String, Vec<&CellRecord>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in records {
        let key = format!(
            "{}|{}|{:?}",
            r.method.name(),
            r.rho,
            r.norm.map(|n| (n.s.to_string(), n.r))
        );
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let opt_mean = |v: Vec<Option<f64>>| -> f64 {
        let v: Vec<f64> = v.into_iter().flatten().collect();
        if v.is_empty() {
            f64::NAN
        } else {
            mean(&v)
        }
    };
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for key in order {
        let g = &groups[&key];
        let first = g[0];
        let acc: Vec<f64> = g.iter().map(|r| r.final_test.overall).collect();
        let efi_vals = g
            .iter()
            .map(|r| match &r.efi {
                Some(s) => trace_inverse_from_eigenvalues(&s.eigenvalues, ridge).map(Some),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let (s, rr) = match first.norm {
            Some(n) => (n.s.to_string(), n.r.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            first.method.name(),
            first.rho,
            s,
            rr,
            g.len(),
            mean(&acc),
            sample_std(&acc),
            opt_mean(g.iter().map(|r| r.final_test.aligned).collect()),
            opt_mean(g.iter().map(|r| r.final_test.conflicting).collect()),
            mean(&g.iter().map(|r| r.final_test.worst_group).collect::<Vec<_>>()),
            opt_mean(efi_vals),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = r#"
[plan]
methods = ["vanilla", "pgd"]
rhos = [0.1]
norms = [{ s = "2", r = 1.0 }, { s = "inf", r = 1.0 }]
repeats = 2
seed = 5

[data]
n_train = 60
n_val = 10
n_test = 20

[train]
epochs_biased = 1
epochs_debiased = 1
batch_size = 16
hidden = [6]
"#;

    #[test]
    fn grid_expansion() {
        let plan = ExperimentPlan::from_toml_str(PLAN).unwrap();
        let cells = plan.cells();
        // vanilla ignores the norm grid: 1×2 seeds; pgd: 2 norms × 2 seeds.
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].config.train.seed, 5);
        assert_eq!(cells[1].config.data.seed, 6);
        let ids: std::collections::HashSet<_> = cells.iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn empty_grid_rejected() {
        let text = PLAN.replace("methods = [\"vanilla\", \"pgd\"]", "methods = []");
        assert!(ExperimentPlan::from_toml_str(&text).is_err());
        assert!(ExperimentPlan::from_toml_str("[data]\nrho = 0.1\n").is_err());
    }

    #[test]
    fn sample_std_convention() {
        assert_eq!(sample_std(&[0.5]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
