//! Central finite differences against the tape's gradients for every layer.
//!
//!     cargo run --release --example gradcheck

use dance2midi::pipeline::{layer_suites, GRADCHECK_TOLERANCE};

fn main() {
    let reports = layer_suites().expect("suites build");
    for r in &reports {
        let mark = if r.passes(GRADCHECK_TOLERANCE) { "ok" } else { "FAIL" };
        println!("{mark:4} {:<28} {:.2e} over {} entries", r.name, r.max_rel_error, r.entries);
    }
    assert!(reports.iter().all(|r| r.passes(GRADCHECK_TOLERANCE)));
}
