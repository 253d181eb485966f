//! One PASS/FAIL line per acceptance criterion on the shipped scenarios.
//!
//! Exits non-zero on harness errors. Failed criteria only change the exit status when
//! `LFC_ACCEPTANCE_STRICT=1`.

use std::path::Path;
use std::process::ExitCode;

use lfc::acceptance::evaluate;
use lfc::pipeline::{load_scenarios, run_all};

fn main() -> ExitCode {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let scenarios = match load_scenarios(&dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("acceptance: cannot load scenarios: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut runs = Vec::new();
    let mut harness_error = false;
    for r in run_all(scenarios) {
        match r {
            Ok(r) => runs.push(r),
            Err(e) => {
                eprintln!("acceptance: scenario run failed: {e}");
                harness_error = true;
            }
        }
    }
    let results = evaluate(&runs);
    for c in &results {
        println!("{}", c.line());
    }
    let failed = results.iter().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    let strict = std::env::var("LFC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if harness_error || (strict && failed > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
