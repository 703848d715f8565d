//! Runs every built-in scenario at its default size and prints the comparison.

use std::time::Instant;

use superbunch::scenario::{builtin_scenarios, run_scenario};

fn main() {
    for s in builtin_scenarios::<f64>() {
        let t = Instant::now();
        let out = run_scenario(&s).expect("scenario runs");
        let mid = out.mc.nearest_index(0.0).expect("grid");
        println!(
            "{:<14} g2(0) = {:.4} ± {:.4} (ref {:.4})  max|z| = {:.2}  frac(|z|>2) = {:.3}  rmse = {:.4}  {:.1?}",
            s.name,
            out.mc.g2[mid],
            out.mc.se[mid],
            out.reference.g2[mid],
            out.report.max_abs_z,
            out.report.frac_above_2,
            out.report.rmse,
            t.elapsed()
        );
    }
}
