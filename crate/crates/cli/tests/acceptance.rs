//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full-statistics suite by default (about a quarter of an hour on
//! one core). `MZI_SUITE=quick` selects the reduced suite.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mzi_ncoinc::validate::{run_suite, Suite, SuiteParams};

const BIN: &str = env!("CARGO_BIN_EXE_mzi-ncoinc");

/// Wall-clock budget for the Monte Carlo fringe campaigns.
fn runtime_budget(suite: Suite) -> f64 {
    match suite {
        Suite::Full => 600.0,
        Suite::Quick => 60.0,
    }
}

/// The CLI twice with the same seed, pinned to one and to four worker threads.
fn cli_determinism() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(BIN)
            .env("RAYON_NUM_THREADS", threads)
            .args(["simulate", "--n", "2", "--steps", "90", "--dwell", "10ms", "--seed", "42", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        outputs.push(fs::read(out.join("scan.csv")).map_err(|e| e.to_string())?);
    }
    let same = outputs[0] == outputs[1];
    Ok((same, format!("{} vs {} bytes", outputs[0].len(), outputs[1].len())))
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as --nocapture; only a filter
    // that names nothing here skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let suite = match std::env::var("MZI_SUITE").as_deref() {
        Ok("quick") => Suite::Quick,
        _ => Suite::Full,
    };
    let params = SuiteParams::for_suite(suite);
    println!(
        "acceptance suite {suite:?}: R = {:.1e}/s, window {} ps, width tolerance {}%",
        params.rate,
        params.window_ps,
        100.0 * params.tolerance.fwhm_relative
    );
    let t0 = Instant::now();
    let report = match run_suite(&params, |c| println!("{} ({:.1} s)", c.line(), c.seconds)) {
        Ok(r) => r,
        Err(e) => {
            println!("[FAIL] suite aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut pass = report.passed();

    let budget = runtime_budget(suite);
    let campaigns = report.criteria.iter().find(|c| c.id == 2).map_or(f64::NAN, |c| c.seconds);
    let in_budget = campaigns <= budget;
    println!(
        "[{}] criterion 2 runtime: fringe campaigns took {campaigns:.0} s | expected <= {budget:.0} s",
        if in_budget { "PASS" } else { "FAIL" }
    );
    pass &= in_budget;

    match cli_determinism() {
        Ok((same, detail)) => {
            println!(
                "[{}] criterion 8 (cli): simulate --seed 42 with 1 and 4 threads | {detail}, {}",
                if same { "PASS" } else { "FAIL" },
                if same { "identical" } else { "different" }
            );
            pass &= same;
        }
        Err(e) => {
            println!("[FAIL] criterion 8 (cli): simulate failed: {e}");
            pass = false;
        }
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!(
        "acceptance {}: {:.0} s total",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
