//! User-facing run configuration: every dimensioned value is a unit-suffixed
//! string, loadable from a TOML file and overridable field by field by flags.

use std::path::Path;

use clap::Args;
use serde::Deserialize;
use superbunch::analytic::{AnalyticModel, ModelKind};
use superbunch::model::{CascadeConfig, ChannelStage, OpticalConfig};
use superbunch::scenario::{self, Scenario};
use superbunch::speckle::{default_workers, McRunConfig, SourceModel, SourceStatistics};
use thiserror::Error;

use crate::units::{parse_angle, parse_grid, parse_length, parse_stages, UnitError};

/// Environment variable overriding the worker count of any command.
pub const WORKERS_ENV: &str = "SUPERBUNCH_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("{field}: {source}")]
    Unit { field: &'static str, source: UnitError },
    #[error("{0}")]
    Invalid(String),
    #[error("{WORKERS_ENV}=`{0}` is not a positive integer")]
    BadWorkersEnv(String),
}

fn unit(field: &'static str) -> impl Fn(UnitError) -> ConfigFileError {
    move |source| ConfigFileError::Unit { field, source }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    /// Wavelength, e.g. 780nm.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Source transverse width, e.g. 356um.
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub source_width: Option<String>,
    /// Source-to-detector distance, e.g. 1.79m.
    #[arg(long)]
    pub z: Option<String>,
    /// Detector separation grid <start>:<stop>:<count>, e.g. -8mm:8mm:161.
    #[arg(long, allow_hyphen_values = true)]
    pub dx: Option<String>,
    /// Fixed crossing angle of a single channel pair, e.g. 0.007deg.
    #[arg(long)]
    pub theta: Option<String>,
    /// Scan range of a single scanned channel pair, e.g. 0.026deg.
    #[arg(long)]
    pub theta0: Option<String>,
    /// Cascade stages, e.g. scan:0.022deg,scan:0.022deg or fixed:0.007deg.
    #[arg(long)]
    pub stages: Option<String>,
    /// Monte Carlo realizations.
    #[arg(long)]
    pub realizations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Point emitters across the source.
    #[arg(long)]
    pub emitters: Option<usize>,
    /// Emitter statistics: gaussian or phase.
    #[arg(long)]
    pub statistics: Option<String>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: p.clone(), source })?;
        toml::from_str(&text).map_err(|source| ConfigFileError::Toml { path: p, source })
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(self, top: &CliConfig) -> CliConfig {
        fn pick<T: Clone>(base: Option<T>, top: &Option<T>) -> Option<T> {
            top.clone().or(base)
        }
        CliConfig {
            lambda: pick(self.lambda, &top.lambda),
            source_width: pick(self.source_width, &top.source_width),
            z: pick(self.z, &top.z),
            dx: pick(self.dx, &top.dx),
            theta: pick(self.theta, &top.theta),
            theta0: pick(self.theta0, &top.theta0),
            stages: pick(self.stages, &top.stages),
            realizations: pick(self.realizations, &top.realizations),
            seed: pick(self.seed, &top.seed),
            workers: pick(self.workers, &top.workers),
            emitters: pick(self.emitters, &top.emitters),
            statistics: pick(self.statistics, &top.statistics),
        }
    }

    /// Spelled-out form of a preset, in SI units.
    pub fn from_scenario(s: &Scenario<f64>) -> CliConfig {
        let cfg = &s.run.cfg;
        let grid = &cfg.dx_grid;
        CliConfig {
            lambda: Some(format!("{}m", cfg.wavelength)),
            source_width: Some(format!("{}m", cfg.source_width)),
            z: Some(format!("{}m", cfg.distance)),
            dx: Some(format!("{}m:{}m:{}", grid[0], grid[grid.len() - 1], grid.len())),
            stages: Some(if s.run.stages.is_empty() { "none".into() } else { s.run.stages.label() }),
            realizations: Some(s.run.realizations),
            seed: Some(s.run.seed),
            ..CliConfig::default()
        }
    }

    /// Geometry; unset fields take the preset values.
    pub fn optical(&self) -> Result<OpticalConfig<f64>, ConfigFileError> {
        let d = scenario::default_config::<f64>();
        let length = |v: &Option<String>, field, default| v.as_deref().map_or(Ok(default), |s| parse_length(s).map_err(unit(field)));
        let cfg = OpticalConfig {
            wavelength: length(&self.lambda, "lambda", d.wavelength)?,
            source_width: length(&self.source_width, "R", d.source_width)?,
            distance: length(&self.z, "z", d.distance)?,
            dx_grid: match &self.dx {
                Some(s) => parse_grid(s).map_err(unit("dx"))?,
                None => d.dx_grid,
            },
        };
        superbunch::model::validate_config(cfg).map_err(|e| ConfigFileError::Invalid(e.to_string()))
    }

    /// Channel stages from `--stages`, else a single `--theta` or `--theta0` pair, else none.
    pub fn cascade(&self) -> Result<CascadeConfig<f64>, ConfigFileError> {
        let given = [self.stages.is_some(), self.theta.is_some(), self.theta0.is_some()];
        if given.iter().filter(|g| **g).count() > 1 {
            return Err(ConfigFileError::Invalid("give only one of --stages, --theta and --theta0".into()));
        }
        let single = |stage: ChannelStage<f64>| CascadeConfig::single(stage).map_err(|e| ConfigFileError::Invalid(e.to_string()));
        if let Some(s) = &self.stages {
            parse_stages(s).map_err(unit("stages"))
        } else if let Some(t) = &self.theta {
            single(ChannelStage::FixedAngle { theta: parse_angle(t).map_err(unit("theta"))? })
        } else if let Some(t) = &self.theta0 {
            single(ChannelStage::UniformScan { theta0: parse_angle(t).map_err(unit("theta0"))? })
        } else {
            Ok(CascadeConfig::hbt())
        }
    }

    /// Closed-form model of the requested kind, checked against the given angles.
    pub fn analytic(&self, kind: ModelKind) -> Result<AnalyticModel<f64>, ConfigFileError> {
        let cfg = self.optical()?;
        let stages = self.cascade()?;
        let missing = |what: &str| ConfigFileError::Invalid(format!("model `{}` needs {what}", kind.name()));
        match kind {
            ModelKind::Fringe if stages.is_empty() => return Err(missing("--theta")),
            ModelKind::Scanned if stages.is_empty() => return Err(missing("--theta0")),
            ModelKind::Cascade if stages.is_empty() => return Err(missing("--stages")),
            _ => {}
        }
        AnalyticModel::new(kind, cfg, stages).map_err(|e| ConfigFileError::Invalid(e.to_string()))
    }

    pub fn source(&self) -> Result<SourceModel<f64>, ConfigFileError> {
        let mut source = SourceModel::default();
        if let Some(n) = self.emitters {
            source.n_points = n;
        }
        source.statistics = match self.statistics.as_deref() {
            None | Some("gaussian") => SourceStatistics::ComplexGaussian,
            Some("phase") => SourceStatistics::RandomPhase,
            Some(other) => return Err(ConfigFileError::Invalid(format!("unknown statistics `{other}`; use gaussian or phase"))),
        };
        Ok(source)
    }

    /// Worker count: flag, then environment, then file, then all cores.
    pub fn resolve_workers(&self, flag: Option<usize>, env: Option<&str>) -> Result<usize, ConfigFileError> {
        if let Some(w) = flag {
            return Ok(w.max(1));
        }
        if let Some(v) = env {
            return match v.trim().parse::<usize>() {
                Ok(w) if w > 0 => Ok(w),
                _ => Err(ConfigFileError::BadWorkersEnv(v.to_owned())),
            };
        }
        Ok(self.workers.unwrap_or_else(default_workers).max(1))
    }

    /// Monte Carlo run; `workers` has already been resolved.
    pub fn mc_run(&self, workers: usize) -> Result<McRunConfig<f64>, ConfigFileError> {
        let mut run = McRunConfig::new(
            self.optical()?,
            self.cascade()?,
            self.realizations.unwrap_or(scenario::REALIZATIONS),
            self.seed.unwrap_or(scenario::SEED),
        );
        run.source = self.source()?;
        run.workers = workers;
        run.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        Ok(run)
    }
}
