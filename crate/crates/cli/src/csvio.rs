//! Curve interchange: CSV with header `dx_m,g2,se`, LF line endings and
//! shortest round-trip decimal values.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use superbunch::model::{CurveMeta, G2Curve};
use thiserror::Error;

pub const HEADER: [&str; 3] = ["dx_m", "g2", "se"];

#[derive(Debug, Error)]
pub enum CurveIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: expected header `dx_m,g2,se`, found `{found}`")]
    Header { path: String, found: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}: no data rows")]
    Empty { path: String },
    #[error("{path}: {source}")]
    Invalid { path: String, source: superbunch::model::ConfigError },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn write_curve_to<W: Write>(writer: W, curve: &G2Curve<f64>) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(HEADER)?;
    for i in 0..curve.len() {
        w.write_record([curve.dx[i].to_string(), curve.g2[i].to_string(), curve.se[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn curve_to_string(curve: &G2Curve<f64>) -> String {
    let mut buf = Vec::new();
    write_curve_to(&mut buf, curve).expect("in-memory write");
    String::from_utf8(buf).expect("ascii output")
}

pub fn write_curve(path: &Path, curve: &G2Curve<f64>) -> Result<(), CurveIoError> {
    let file = File::create(path).map_err(|source| CurveIoError::Io { path: path.display().to_string(), source })?;
    write_curve_to(file, curve)?;
    Ok(())
}

pub fn read_curve_from<R: Read>(reader: R, path: &str) -> Result<G2Curve<f64>, CurveIoError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().map(str::trim).ne(HEADER) {
        return Err(CurveIoError::Header { path: path.to_owned(), found: headers.iter().collect::<Vec<_>>().join(",") });
    }
    let (mut dx, mut g2, mut se) = (Vec::new(), Vec::new(), Vec::new());
    for record in r.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CurveIoError::Parse { path: path.to_owned(), line, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64, CurveIoError> {
            let raw = record.get(i).unwrap_or("").trim();
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CurveIoError::Parse {
                path: path.to_owned(),
                line,
                message: format!("column `{}`: `{raw}` is not a finite number", HEADER[i]),
            })
        };
        dx.push(field(0)?);
        g2.push(field(1)?);
        se.push(field(2)?);
    }
    if dx.is_empty() {
        return Err(CurveIoError::Empty { path: path.to_owned() });
    }
    let meta = CurveMeta::named(path);
    G2Curve::new(dx, g2, se, meta).map_err(|source| CurveIoError::Invalid { path: path.to_owned(), source })
}

pub fn read_curve(path: &Path) -> Result<G2Curve<f64>, CurveIoError> {
    let file = File::open(path).map_err(|source| CurveIoError::Io { path: path.display().to_string(), source })?;
    read_curve_from(file, &path.display().to_string())
}

/// `key = value` lines, one per entry.
pub fn key_value_lines<'a>(entries: impl IntoIterator<Item = (&'a str, String)>) -> String {
    entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned())))
        .collect()
}
