use std::path::Path;

use pgd_core::metrics::{evaluate_predictions, histogram_bin, norm_histogram, HISTOGRAM_BINS};
use pgd_core::plan::{run_plan, CellRecord, ExperimentPlan, RunOptions, AGGREGATE_FILE, AGGREGATE_HEADER, CELL_FILE};

fn plan_text(out: &Path, repeats: usize, methods: &str) -> String {
    format!(
        r#"
[plan]
methods = [{methods}]
rhos = [0.05, 0.2]
repeats = {repeats}
seed = 3
out = "{}"

[data]
n_train = 80
n_val = 10
n_test = 30

[train]
epochs_biased = 1
epochs_debiased = 1
batch_size = 16
hidden = [8]
"#,
        out.display()
    )
}

fn cell_records(out: &Path) -> Vec<CellRecord> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(out.join("cells")).unwrap() {
        let text = std::fs::read_to_string(e.unwrap().path().join(CELL_FILE)).unwrap();
        v.push(serde_json::from_str(&text).unwrap());
    }
    v
}

#[test]
fn interrupted_plan_resumes_from_completed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::from_toml_str(&plan_text(dir.path(), 2, "\"vanilla\", \"pgd\"")).unwrap();
    assert_eq!(plan.cells().len(), 8);

    let first = run_plan(
        &plan,
        &RunOptions {
            threads: 2,
            stop_after: Some(3),
        },
    )
    .unwrap();
    assert_eq!((first.executed, first.skipped, first.pending), (3, 0, 5));
    assert!(!first.is_success());

    let second = run_plan(
        &plan,
        &RunOptions {
            threads: 2,
            stop_after: None,
        },
    )
    .unwrap();
    assert_eq!((second.executed, second.skipped, second.pending), (5, 3, 0));
    assert!(second.is_success());

    let third = run_plan(
        &plan,
        &RunOptions {
            threads: 1,
            stop_after: None,
        },
    )
    .unwrap();
    assert_eq!((third.executed, third.skipped), (0, 8));
    assert_eq!(third.records, second.records);

    // Changing the config invalidates the cells' checksums.
    let changed = plan_text(dir.path(), 2, "\"vanilla\", \"pgd\"").replace("hidden = [8]", "hidden = [9]");
    let plan2 = ExperimentPlan::from_toml_str(&changed).unwrap();
    let fourth = run_plan(
        &plan2,
        &RunOptions {
            threads: 1,
            stop_after: Some(1),
        },
    )
    .unwrap();
    assert_eq!((fourth.executed, fourth.skipped), (1, 0));
}

#[test]
fn aggregate_means_match_cells() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::from_toml_str(&plan_text(dir.path(), 3, "\"vanilla\", \"pgd\"")).unwrap();
    let outcome = run_plan(
        &plan,
        &RunOptions {
            threads: 1,
            stop_after: None,
        },
    )
    .unwrap();
    assert!(outcome.is_success());
    let csv = std::fs::read_to_string(dir.path().join(AGGREGATE_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), AGGREGATE_HEADER);
    let cells = cell_records(dir.path());
    let mut rows = 0;
    for line in lines {
        rows += 1;
        let f: Vec<&str> = line.split(',').collect();
        let members: Vec<&CellRecord> = cells
            .iter()
            .filter(|c| c.method.name() == f[0] && c.rho.to_string() == f[1])
            .collect();
        assert_eq!(f[4].parse::<usize>().unwrap(), members.len());
        assert_eq!(members.len(), 3);
        let mean = |g: fn(&CellRecord) -> f64| members.iter().map(|c| g(c)).sum::<f64>() / members.len() as f64;
        let acc: f64 = f[5].parse().unwrap();
        assert!((acc - mean(|c| c.final_test.overall)).abs() <= 1e-12);
        let worst: f64 = f[9].parse().unwrap();
        assert!((worst - mean(|c| c.final_test.worst_group)).abs() <= 1e-12);
        let accs: Vec<f64> = members.iter().map(|c| c.final_test.overall).collect();
        let m = accs.iter().sum::<f64>() / 3.0;
        let std = (accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 2.0).sqrt();
        assert!((f[6].parse::<f64>().unwrap() - std).abs() <= 1e-12);
        assert!(f[10].parse::<f64>().unwrap() > 0.0);
    }
    assert_eq!(rows, 4);
}

#[test]
fn one_cell_plan() {
    let dir = tempfile::tempdir().unwrap();
    let text = plan_text(dir.path(), 1, "\"jtt\"").replace("rhos = [0.05, 0.2]", "rhos = [0.1]");
    let plan = ExperimentPlan::from_toml_str(&text).unwrap();
    let outcome = run_plan(&plan, &RunOptions::default()).unwrap();
    assert_eq!(outcome.records.len(), 1);
    let csv = std::fs::read_to_string(dir.path().join(AGGREGATE_FILE)).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "1");
    assert_eq!(row[6], "0");
    assert_eq!(cell_records(dir.path()).len(), 1);
}

#[test]
fn histogram_bins_follow_labels() {
    assert_eq!(HISTOGRAM_BINS, 10);
    assert_eq!(histogram_bin(0.0), 0);
    assert_eq!(histogram_bin(0.1), 1);
    assert_eq!(histogram_bin(0.0999), 0);
    assert_eq!(histogram_bin(0.9), 9);
    assert_eq!(histogram_bin(1.0), 9);
    let norms: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let aligned: Vec<bool> = (0..=100).map(|k| k % 3 == 0).collect();
    let h = norm_histogram(&norms, &aligned);
    assert_eq!(h.total(), 101);
    let edges: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    assert_eq!(h.edges, edges);
    assert_eq!(
        h.aligned.iter().sum::<usize>() + h.conflicting.iter().sum::<usize>(),
        101
    );
}

#[test]
fn evaluate_examples() {
    use pgd_core::data::{generate_biased_dataset, DatasetSpec};
    let ds = generate_biased_dataset(&DatasetSpec {
        n_train: 10,
        n_val: 0,
        n_test: 1000,
        ..Default::default()
    })
    .unwrap();
    let truth: Vec<usize> = ds.test.iter().map(|s| s.target).collect();
    let perfect = evaluate_predictions(&truth, &ds.test, 10);
    assert_eq!(perfect.overall, 1.0);
    assert_eq!(perfect.worst_group, 1.0);
    assert_eq!(perfect.n_aligned + perfect.n_conflicting, perfect.n);
    let constant = evaluate_predictions(&vec![0; ds.test.len()], &ds.test, 10);
    let zeros = truth.iter().filter(|&&t| t == 0).count() as f64 / truth.len() as f64;
    assert_eq!(constant.overall, zeros);
}
