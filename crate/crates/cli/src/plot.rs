//! Standalone SVG rendering of g2 curves on shared axes: points with error bars
//! for curves carrying standard errors, polylines otherwise.

use std::fmt::Write as _;

use superbunch::model::G2Curve;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub label: String,
    pub curve: &'a G2Curve<f64>,
}

/// Ticks at 1, 2 or 5 times a power of ten spanning `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::EPSILON);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{:.6}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(series: &[Series<'_>]) -> Result<String, PlotError> {
    if series.is_empty() || series.iter().all(|s| s.curve.is_empty()) {
        return Err(PlotError::Empty);
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        let c = s.curve;
        for i in 0..c.len() {
            let x = c.dx[i] * 1e3;
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(c.g2[i] - c.se[i]);
            y1 = y1.max(c.g2[i] + c.se[i]);
        }
    }
    if x1 - x0 < 1e-12 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    y0 -= pad;
    y1 += pad;
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<g id="axes" stroke="black" fill="none">"#);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/>"#);
    for t in nice_ticks(x0, x1, 8) {
        let x = sx(t);
        let yb = TOP + ph;
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}"/>"#, yb - 5.0);
        let _ =
            writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" stroke="none" fill="black">{}</text>"#, yb + 16.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1, 6) {
        let y = sy(t);
        let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#, LEFT + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" stroke="none" fill="black">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">dx (mm)</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">g⁽²⁾</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (n, ser) in series.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let c = ser.curve;
        let _ = writeln!(s, r#"<g class="series" id="series-{n}">"#);
        if c.has_uncertainty() {
            for i in 0..c.len() {
                let (x, y) = (sx(c.dx[i] * 1e3), sy(c.g2[i]));
                if c.se[i] > 0.0 {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-width="0.8"/>"#,
                        sy(c.g2[i] - c.se[i]),
                        sy(c.g2[i] + c.se[i])
                    );
                }
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.2" fill="{color}"/>"#);
            }
        } else {
            let pts: Vec<String> = (0..c.len()).map(|i| format!("{:.2},{:.2}", sx(c.dx[i] * 1e3), sy(c.g2[i]))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        let ly = TOP + 16.0 + 16.0 * n as f64;
        let lx = WIDTH - RIGHT - 190.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 24.0, escape(&ser.label));
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</svg>");
    Ok(s)
}
