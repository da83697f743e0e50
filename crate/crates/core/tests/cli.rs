use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
n_train = 120
n_val = 20
n_test = 40
rho = 0.05

[train]
epochs_biased = 1
epochs_debiased = 1
batch_size = 32
hidden = [8]
"#;

fn pgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn toy_prints_closed_form() {
    let o = pgd(&["toy", "--size-m", "9", "--size-s", "1", "--a", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.rsplit(' ').next().unwrap().parse().unwrap()
    };
    assert!((value("h*_M =") - 1.0 / 18.0).abs() < 1e-12);
    assert!((value("h*_m =") - 0.5).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pgd(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pgd(&["toy", "--size-m", "9"]).status.code(), Some(2));
    assert_eq!(pgd(&["train", "--bogus-flag"]).status.code(), Some(2));
    assert_eq!(pgd(&["train", "--method", "nope"]).status.code(), Some(2));
}

#[test]
fn validation_errors_exit_1() {
    assert_eq!(
        pgd(&["toy", "--size-m", "0", "--size-s", "1", "--a", "1"])
            .status
            .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[data]\nrho = 2.0\n").unwrap();
    let o = pgd(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rho"));
    assert_eq!(pgd(&["train", "--config", "/no/such/file.toml"]).status.code(), Some(1));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut sums = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = pgd(&[
            "gen-data",
            "--rho",
            "0.01",
            "--seed",
            "4",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("manifest.toml").exists());
        sums.push(stdout(&o).rsplit("checksum ").next().unwrap().to_string());
    }
    assert_eq!(sums[0], sums[1]);
}

#[test]
fn train_writes_identical_reports_for_identical_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for method in [
        "pgd",
        "vanilla",
        "jtt",
        "lff",
        "pgd-reweight",
        "loss-resample",
        "pgd-single-stage",
    ] {
        let mut reports = Vec::new();
        for run in ["1", "2"] {
            let out = dir.path().join(format!("{method}-{run}"));
            let o = pgd(&[
                "train",
                "--method",
                method,
                "--config",
                &cfg,
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{method}: {}", String::from_utf8_lossy(&o.stderr));
            assert!(out.join("timing.json").exists());
            reports.push(std::fs::read(out.join("report.json")).unwrap());
        }
        assert_eq!(reports[0], reports[1], "{method} report differs between runs");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("pgd-1/report.json")).unwrap()).unwrap();
    assert_eq!(report["files"]["grad_norms_csv"], "grad_norms.csv");
    assert_eq!(report["method"], "pgd");
}

#[test]
fn fisher_compares_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let runs: Vec<String> = ["pgd", "vanilla"]
        .iter()
        .map(|m| {
            let out = dir.path().join(m);
            assert!(
                pgd(&["train", "--method", m, "--config", &cfg, "--out", out.to_str().unwrap()])
                    .status
                    .success()
            );
            out.to_string_lossy().into_owned()
        })
        .collect();
    let report_dir = dir.path().join("fisher");
    let o = pgd(&["fisher", &runs[0], &runs[1], "--out", report_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(report_dir.join("fisher.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert_eq!(report["runs"][0]["weighting"], "h");
    assert_eq!(report["runs"][1]["weighting"], "uniform");
}

#[test]
fn sweep_runs_plan_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    std::fs::write(&plan, format!("[plan]\nmethods = [\"vanilla\"]\nrhos = [0.1]\n{SMALL}")).unwrap();
    let out = dir.path().join("sweep");
    let o = pgd(&["sweep", plan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("aggregate.csv").exists());

    // Every cell diverges at this learning rate; each failure is recorded and the plan still finishes.
    let diverging = SMALL.replace("hidden = [8]", "hidden = [8]\noptimizer = { learning_rate = 1e300 }");
    std::fs::write(
        &plan,
        format!("[plan]\nmethods = [\"vanilla\", \"pgd\"]\nrhos = [0.1]\n{diverging}"),
    )
    .unwrap();
    let failed = dir.path().join("failed");
    let o = pgd(&["sweep", plan.to_str().unwrap(), "--out", failed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let failures: serde_json::Value =
        serde_json::from_slice(&std::fs::read(failed.join("failures.json")).unwrap()).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 2);
    assert!(failed.join("aggregate.csv").exists());
}
