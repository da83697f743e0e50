//! Runs the nine acceptance criteria at their stated thresholds and prints one
//! line per criterion. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use pgd_core::acceptance::{run_acceptance, AcceptanceConfig};

fn main() -> ExitCode {
    let start = Instant::now();
    let cfg = AcceptanceConfig::default();
    let mut last = Instant::now();
    let results = run_acceptance(&cfg, |r| {
        println!("{r} ({:.1}s)", last.elapsed().as_secs_f64());
        last = Instant::now();
    });
    let passed = results.iter().filter(|r| r.passed).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
