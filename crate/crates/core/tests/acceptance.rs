//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! `LASALLE_SEED` overrides the seed; criterion ids given as arguments
//! restrict the run.

use lasalle_core::acceptance::{criterion_ids, run_selected};

fn main() {
    let seed = std::env::var("LASALLE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut ids: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if ids.is_empty() {
        ids = criterion_ids().map(|(id, _)| id).collect();
    }
    println!("acceptance suite, seed {seed}");
    let report = run_selected(seed, &ids);
    for c in &report.criteria {
        println!("{}", c.line());
    }
    let failed = report.criteria.iter().filter(|c| !c.passed).count();
    println!("{} passed, {failed} failed", report.criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
