use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use pgd_core::acceptance::{run_acceptance, AcceptanceConfig};
use pgd_core::config::ExperimentConfig;
use pgd_core::data::{generate_biased_dataset, write_dataset_dir, DataSource};
use pgd_core::fisher::{toy_brute_force, toy_erm, toy_optimal_h, ToyProblem};
use pgd_core::pipelines::{train_method, Method};
use pgd_core::plan::{run_plan, ExperimentPlan, RunOptions};
use pgd_core::report::{fisher_report, write_fisher_report, write_run, FISHER_FILE};

/// Gradient-norm debiasing experiments on synthetic colored digits.
#[derive(Parser)]
#[command(name = "pgd", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Seed for data and training; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (directory for most commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config; `profile = "desk" | "full"` picks the base values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a biased dataset directory.
    GenData {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        n_train: Option<usize>,
        /// 1 = stroke colour, 2 = stroke and background colour.
        #[arg(long)]
        attributes: Option<usize>,
        /// Directory with the MNIST IDX files, used instead of procedural glyphs.
        #[arg(long)]
        idx_dir: Option<PathBuf>,
    },
    /// Train one method and write a run directory.
    Train {
        #[arg(long, default_value = "pgd")]
        method: Method,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Run a plan file and write per-cell reports plus an aggregate CSV.
    Sweep {
        plan: PathBuf,
        /// Stop after this many cells; rerunning resumes.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Fisher diagnostics of run directories under one shared ridge.
    Fisher {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Closed-form and brute-force optimum of the two-group toy problem.
    Toy {
        #[arg(long)]
        size_m: usize,
        #[arg(long)]
        size_s: usize,
        #[arg(long)]
        a: f64,
        #[arg(long, default_value_t = 10_001)]
        grid: usize,
    },
    /// Run the acceptance suite.
    Accept,
}

fn load_config(g: &Global) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = g.seed {
        cfg.data.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn out_dir(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::GenData {
            rho,
            n_train,
            attributes,
            idx_dir,
        } => {
            let mut cfg = load_config(g)?;
            if let Some(r) = rho {
                cfg.data.rho = r;
            }
            if let Some(n) = n_train {
                cfg.data.n_train = n;
            }
            if let Some(k) = attributes {
                cfg.data.n_bias_attributes = k;
            }
            if let Some(dir) = idx_dir {
                cfg.data.source = DataSource::ExternalIdx { dir };
            }
            let data = generate_biased_dataset(&cfg.data)?;
            let out = out_dir(g, "data/colored");
            let manifest = write_dataset_dir(&data, &out)?;
            println!("wrote {} (checksum {})", out.display(), manifest.checksum());
        }
        Cmd::Train { method, rho } => {
            let mut cfg = load_config(g)?;
            if let Some(r) = rho {
                cfg.data.rho = r;
            }
            cfg.validate()?;
            let data = generate_biased_dataset(&cfg.data)?;
            info!("training {method} on {} samples", data.train.len());
            let result = train_method(method, &data, &cfg.train, &cfg.jtt)?;
            let out = out_dir(g, &format!("runs/{}", method.name()));
            let report = write_run(&out, &cfg, &data, &result)?;
            let t = &report.final_test;
            println!(
                "{method}: test {:.4} aligned {} conflicting {} worst-group {:.4} -> {}",
                t.overall,
                fmt_opt(t.aligned),
                fmt_opt(t.conflicting),
                t.worst_group,
                out.display()
            );
        }
        Cmd::Sweep { plan, stop_after } => {
            let mut p = ExperimentPlan::load(&plan)?;
            if let Some(o) = &g.out {
                p.out = o.clone();
            }
            if let Some(s) = g.seed {
                p.seed = s;
            }
            let outcome = run_plan(
                &p,
                &RunOptions {
                    threads: g.threads,
                    stop_after,
                },
            )?;
            println!(
                "{} cells run, {} resumed, {} pending, {} failed -> {}",
                outcome.executed,
                outcome.skipped,
                outcome.pending,
                outcome.failures.len(),
                p.out.display()
            );
            for f in &outcome.failures {
                eprintln!("failed: {}: {}", f.id, f.error);
            }
            return Ok(outcome.failures.is_empty());
        }
        Cmd::Fisher { runs } => {
            let dirs: Vec<&Path> = runs.iter().map(|p| p.as_path()).collect();
            let report = fisher_report(&dirs)?;
            println!("ridge {:.6e}", report.ridge);
            println!(
                "{:<32} {:<18} {:<8} {:>14} {:>14}",
                "run", "method", "h", "max eig", "trace inv"
            );
            for r in &report.runs {
                println!(
                    "{:<32} {:<18} {:<8} {:>14.6e} {:>14.6e}",
                    r.run,
                    r.method.name(),
                    r.weighting,
                    r.summary.max_eigenvalue,
                    r.summary.trace_inverse
                );
            }
            let path = match &g.out {
                Some(o) => {
                    std::fs::create_dir_all(o)?;
                    o.join(FISHER_FILE)
                }
                None => runs[0].join(FISHER_FILE),
            };
            write_fisher_report(&report, &path)?;
            println!("-> {}", path.display());
        }
        Cmd::Toy {
            size_m,
            size_s,
            a,
            grid,
        } => {
            let prob = ToyProblem::new(size_m, size_s, a)?;
            let erm = toy_erm(&prob);
            let (hm, hs) = toy_optimal_h(&prob);
            let best = toy_brute_force(&prob, grid)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "theta_U = {}", erm.theta)?;
            writeln!(out, "h*_M = {hm}")?;
            writeln!(out, "h*_m = {hs}")?;
            writeln!(out, "|M| h*_M = {}", size_m as f64 * hm)?;
            writeln!(
                out,
                "brute force ({grid} points): |M| h_M = {}, trace inverse = {}",
                best.mass_major, best.trace_inverse
            )?;
            writeln!(out, "{:>6} {:>14} {:>14} {:>14}", "t", "h_M", "h_m", "trace_inv")?;
            for k in 1..10 {
                let t = k as f64 / 10.0;
                writeln!(
                    out,
                    "{t:>6.1} {:>14.6e} {:>14.6e} {:>14.6e}",
                    t / size_m as f64,
                    (1.0 - t) / size_s as f64,
                    prob.objective(t)
                )?;
            }
        }
        Cmd::Accept => {
            let mut cfg = AcceptanceConfig::default();
            if g.config.is_some() {
                let base = load_config(g)?;
                cfg.data = base.data;
                cfg.train = base.train;
            }
            if let Some(s) = g.seed {
                cfg.seeds = vec![s, s + 1, s + 2];
            }
            let results = run_acceptance(&cfg, |r| println!("{r}"));
            let passed = results.iter().filter(|r| r.passed).count();
            println!("{passed}/{} criteria passed", results.len());
            return Ok(passed == results.len());
        }
    }
    Ok(true)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        // `pgd toy | head` closes the pipe early; that is not an error.
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
