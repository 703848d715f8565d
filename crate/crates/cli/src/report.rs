//! Text artifacts: the fit report, the simulation sidecar and comparison summaries.

use std::fmt::Write as _;

use superbunch::correlator::ComparisonReport;
use superbunch::fitting::{FitReport, Weighting};

use crate::csvio::parse_key_values;

fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::StandardError => "se",
        Weighting::Unweighted => "none",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_owned(), |v| format!("{v:e}"))
}

/// Human-readable summary followed by a `# params` section of `key = value` lines.
pub fn render_fit_report(report: &FitReport<f64>, data_label: &str) -> String {
    let mut s = String::new();
    let free = report.params.iter().filter(|p| p.stderr.is_some()).count();
    let _ = writeln!(s, "Fit of the {} model to {}", report.model.name(), data_label);
    let _ = writeln!(s, "points: {}, free parameters: {}, weighting: {}", report.fitted.len(), free, weighting_name(report.weighting));
    let _ = writeln!(
        s,
        "{} after {} iterations; rss {:.6e}, reduced chi2 {:.4e}",
        if report.converged { "converged" } else { "stopped" },
        report.iterations,
        report.rss,
        report.reduced_chi2
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<12} {:>16} {:>14}", "parameter", "value", "stderr");
    for p in &report.params {
        let se = p.stderr.map_or_else(|| "fixed".to_owned(), |e| format!("{e:.6e}"));
        let _ = writeln!(s, "{:<12} {:>16.9e} {:>14}", p.name, p.value, se);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "peak-to-background ratio: {:.6}", report.peak_to_background);
    match report.fwhm {
        Some(w) => {
            let _ = writeln!(s, "FWHM: {:.6} mm", w * 1e3);
        }
        None => {
            let _ = writeln!(s, "FWHM: undefined (no half-maximum crossing)");
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "# params");
    let _ = writeln!(s, "model = {}", report.model.name());
    for p in &report.params {
        let _ = writeln!(s, "{} = {:e}", p.name, p.value);
        let _ = writeln!(s, "{}_stderr = {}", p.name, opt(p.stderr));
    }
    let _ = writeln!(s, "rss = {:e}", report.rss);
    let _ = writeln!(s, "reduced_chi2 = {:e}", report.reduced_chi2);
    let _ = writeln!(s, "iterations = {}", report.iterations);
    let _ = writeln!(s, "converged = {}", report.converged);
    let _ = writeln!(s, "weighting = {}", weighting_name(report.weighting));
    let _ = writeln!(s, "peak_to_background = {:e}", report.peak_to_background);
    let _ = writeln!(s, "fwhm_m = {}", opt(report.fwhm));
    s
}

/// The `# params` section of a fit report as key-value pairs.
pub fn parse_report_params(text: &str) -> Vec<(String, String)> {
    text.split_once("# params").map_or_else(Vec::new, |(_, tail)| parse_key_values(tail))
}

pub fn render_comparison(report: &ComparisonReport<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "points: {}", report.z.len());
    let _ = writeln!(s, "max|z|: {:.4}", report.max_abs_z);
    let _ = writeln!(s, "rmse: {:.6e}", report.rmse);
    let _ = writeln!(s, "frac(|z|>2): {:.4}", report.frac_above_2);
    let _ = writeln!(s, "verdict: {}", if report.flagged() { "INCONSISTENT (max|z| > 4)" } else { "consistent (max|z| <= 4)" });
    s
}
