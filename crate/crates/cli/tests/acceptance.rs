//! Acceptance suite: every criterion at full scale, single worker.
//! Prints one `[PASS]`/`[FAIL]` line per criterion and exits nonzero on
//! any failure.

use std::process::ExitCode;

use clvpb::verify::{Scale, Verifier};

fn main() -> ExitCode {
    // Test harness flags such as --nocapture are accepted and ignored.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("single-worker pool");
    let mut v = Verifier::new(Scale::Acceptance, 42);
    let suite = filter.as_deref().unwrap_or("all");
    let Some(results) = v.run_named(suite, |r| println!("{r}")) else {
        eprintln!("unknown criterion {suite:?}");
        return ExitCode::FAILURE;
    };
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
