//! User-unit parsing for the command line and config files. Every dimensioned
//! value must carry its unit; results are SI meters and radians.

use superbunch::model::{angle_from_degrees, linspace, CascadeConfig, ChannelStage};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("`{0}` has no unit; lengths need m, mm, um or nm")]
    MissingLengthUnit(String),
    #[error("`{0}` has no unit; angles need deg or rad")]
    MissingAngleUnit(String),
    #[error("`{0}` is not a number")]
    BadNumber(String),
    #[error("`{0}` is not a grid; expected <start>:<stop>:<count>, e.g. 0m:8mm:161")]
    BadGrid(String),
    #[error("`{0}` is not a stage; expected scan:<angle> or fixed:<angle>")]
    BadStage(String),
}

const LENGTH_UNITS: [(&str, i32); 5] = [("nm", -9), ("um", -6), ("µm", -6), ("mm", -3), ("m", 0)];
const ANGLE_UNITS: [&str; 2] = ["deg", "rad"];

fn number(s: &str, original: &str) -> Result<f64, UnitError> {
    let v: f64 = s.trim().parse().map_err(|_| UnitError::BadNumber(original.to_owned()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(UnitError::BadNumber(original.to_owned()))
    }
}

/// `780nm`, `356um`, `1.79m`, `8mm` → meters.
pub fn parse_length(s: &str) -> Result<f64, UnitError> {
    let t = s.trim();
    for (suffix, exp) in LENGTH_UNITS {
        if let Some(num) = t.strip_suffix(suffix) {
            // "mm"/"nm"/"um" end in "m"; the longer suffixes are tried first.
            let num = num.trim();
            if num.contains(['e', 'E']) || exp == 0 {
                return Ok(number(num, s)? * 10f64.powi(exp));
            }
            // Shifting the decimal exponent keeps `780nm` equal to the literal 780e-9.
            return number(&format!("{num}e{exp}"), s);
        }
    }
    Err(UnitError::MissingLengthUnit(s.to_owned()))
}

/// `0.007deg`, `1.22e-4rad` → radians.
pub fn parse_angle(s: &str) -> Result<f64, UnitError> {
    let t = s.trim();
    for suffix in ANGLE_UNITS {
        if let Some(num) = t.strip_suffix(suffix) {
            let v = number(num, s)?;
            return Ok(if suffix == "deg" { angle_from_degrees(v).expect("finite") } else { v });
        }
    }
    Err(UnitError::MissingAngleUnit(s.to_owned()))
}

/// `<start>:<stop>:<count>` → evenly spaced separations in meters.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, UnitError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, stop, count] = parts.as_slice() else {
        return Err(UnitError::BadGrid(s.to_owned()));
    };
    let n: usize = count.trim().parse().map_err(|_| UnitError::BadGrid(s.to_owned()))?;
    let (a, b) = (parse_length(start)?, parse_length(stop)?);
    if n == 1 && a == b {
        return Ok(vec![a]);
    }
    linspace(a, b, n).map_err(|_| UnitError::BadGrid(s.to_owned()))
}

/// Comma-separated `scan:<angle>` / `fixed:<angle>` list; empty or `none` is plain HBT.
pub fn parse_stages(s: &str) -> Result<CascadeConfig<f64>, UnitError> {
    let t = s.trim();
    if t.is_empty() || t == "none" {
        return Ok(CascadeConfig::hbt());
    }
    let stages = t
        .split(',')
        .map(|item| {
            let (mode, angle) = item.trim().split_once(':').ok_or_else(|| UnitError::BadStage(item.to_owned()))?;
            let a = parse_angle(angle)?;
            match mode.trim() {
                "scan" => Ok(ChannelStage::UniformScan { theta0: a }),
                "fixed" => Ok(ChannelStage::FixedAngle { theta: a }),
                _ => Err(UnitError::BadStage(item.to_owned())),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    CascadeConfig::new(stages).map_err(|_| UnitError::BadStage(s.to_owned()))
}

/// Inverse of [`parse_stages`], in radians.
pub fn format_stages(stages: &CascadeConfig<f64>) -> String {
    stages.label()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lengths() {
        assert_eq!(parse_length("780nm").unwrap(), 780e-9);
        assert_eq!(parse_length("356um").unwrap(), 356e-6);
        assert_eq!(parse_length("0.1um").unwrap(), 1e-7);
        assert!((parse_length("1e3nm").unwrap() - 1e-6).abs() < 1e-21);
        assert_eq!(parse_length("1.79m").unwrap(), 1.79);
        assert_eq!(parse_length("8mm").unwrap(), 8e-3);
        assert_eq!(parse_length("-8mm").unwrap(), -8e-3);
        assert_eq!(parse_length("0m").unwrap(), 0.0);
        assert_eq!(parse_length("1.79"), Err(UnitError::MissingLengthUnit("1.79".into())));
        assert!(matches!(parse_length("abcm"), Err(UnitError::BadNumber(_))));
    }

    #[test]
    fn angles() {
        let a = parse_angle("0.007deg").unwrap();
        let b = parse_angle("1.2217304763960306e-4rad").unwrap();
        assert!((a - b).abs() <= 1e-9 * a, "{a} vs {b}");
        // Six significant figures agree to half a unit in the last place.
        let short = parse_angle("1.22173e-4rad").unwrap();
        assert!((a - short).abs() <= 0.5e-9, "{a} vs {short}");
        assert!(matches!(parse_angle("0.007"), Err(UnitError::MissingAngleUnit(_))));
    }

    #[test]
    fn grids() {
        let g = parse_grid("0m:8mm:161").unwrap();
        assert_eq!(g.len(), 161);
        assert_eq!(g[0], 0.0);
        assert!((g[160] - 8e-3).abs() < 1e-18);
        assert_eq!(parse_grid("0m:0m:1").unwrap(), vec![0.0]);
        assert!(parse_grid("0:8mm:161").is_err());
        assert!(parse_grid("0m:8mm").is_err());
    }

    #[test]
    fn stages() {
        let s = parse_stages("scan:0.022deg,fixed:0.007deg").unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.stages[0].is_scan());
        assert!(!s.stages[1].is_scan());
        assert!(parse_stages("none").unwrap().is_empty());
        assert!(parse_stages("tilt:1deg").is_err());
        assert!(parse_stages("scan:0deg").is_err());
        let back = parse_stages(&format_stages(&s)).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn degree_and_radian_spellings_agree(d in 1e-4f64..10.0) {
            let a = parse_angle(&format!("{d}deg")).unwrap();
            let b = parse_angle(&format!("{}rad", d.to_radians())).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }
    }
}
