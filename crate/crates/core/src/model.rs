//! Shared domain types: optical geometry, channel stages and g2 curves.
//!
//! All lengths are meters and all angles radians. Conversion from user units
//! happens at the command-line boundary only.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("wavelength must be positive")]
    NonPositiveWavelength,
    #[error("source_width must be positive")]
    NonPositiveSourceWidth,
    #[error("distance must be positive")]
    NonPositiveDistance,
    #[error("dx_grid is empty")]
    EmptyGrid,
    #[error("dx_grid contains a non-finite value at index {0}")]
    NonFiniteGrid(usize),
    #[error("dx_grid not increasing at index {0}")]
    UnsortedGrid(usize),
    #[error("angle must be finite")]
    NonFiniteAngle,
    #[error("scan range theta0 must be positive")]
    NonPositiveScanRange,
    #[error("curve columns have different lengths ({dx}, {g2}, {se})")]
    CurveLength { dx: usize, g2: usize, se: usize },
    #[error("standard error must be finite and non-negative (index {0})")]
    NegativeStandardError(usize),
    #[error("grid needs at least 2 points for a range, got {0}")]
    GridTooShort(usize),
}

/// Geometry of the one-dimensional source/detector arrangement.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalConfig<T> {
    pub wavelength: T,
    /// Full transverse width R of the uniform source aperture.
    pub source_width: T,
    /// Source-to-detector distance z, shared by both detectors.
    pub distance: T,
    /// Detector separations Δx = x1 − x2, strictly increasing.
    pub dx_grid: Vec<T>,
}

impl<T: Scalar> OpticalConfig<T> {
    pub fn new(wavelength: T, source_width: T, distance: T, dx_grid: Vec<T>) -> Result<Self, ConfigError> {
        validate_config(Self { wavelength, source_width, distance, dx_grid })
    }

    /// k = 2π/λ, always derived from the wavelength.
    #[inline]
    pub fn wavenumber(&self) -> T {
        T::TAU() / self.wavelength
    }

    /// Transverse speckle size λz/R; also the first zero of the HBT envelope.
    pub fn envelope_width(&self) -> T {
        self.wavelength * self.distance / self.source_width
    }

    pub fn with_grid(&self, dx_grid: Vec<T>) -> Self {
        Self { dx_grid, ..self.clone() }
    }
}

/// Checks every invariant of `cfg` and hands it back unchanged, or names the
/// first one that fails.
pub fn validate_config<T: Scalar>(cfg: OpticalConfig<T>) -> Result<OpticalConfig<T>, ConfigError> {
    // `!(x > 0)` also catches NaN.
    if !(cfg.wavelength > T::zero()) || !cfg.wavelength.is_finite() {
        return Err(ConfigError::NonPositiveWavelength);
    }
    if !(cfg.source_width > T::zero()) || !cfg.source_width.is_finite() {
        return Err(ConfigError::NonPositiveSourceWidth);
    }
    if !(cfg.distance > T::zero()) || !cfg.distance.is_finite() {
        return Err(ConfigError::NonPositiveDistance);
    }
    if cfg.dx_grid.is_empty() {
        return Err(ConfigError::EmptyGrid);
    }
    if let Some(i) = cfg.dx_grid.iter().position(|v| !v.is_finite()) {
        return Err(ConfigError::NonFiniteGrid(i));
    }
    if let Some(i) = cfg.dx_grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(ConfigError::UnsortedGrid(i + 1));
    }
    Ok(cfg)
}

/// One pair of mutually first-order incoherent channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelStage<T> {
    /// Constant crossing angle θ between the two channel outputs.
    FixedAngle { theta: T },
    /// Crossing angle swept uniformly over [−θ0/2, θ0/2].
    UniformScan { theta0: T },
}

impl<T: Scalar> ChannelStage<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            ChannelStage::FixedAngle { theta } if !theta.is_finite() => Err(ConfigError::NonFiniteAngle),
            ChannelStage::UniformScan { theta0 } if !theta0.is_finite() => Err(ConfigError::NonFiniteAngle),
            ChannelStage::UniformScan { theta0 } if !(theta0 > T::zero()) => Err(ConfigError::NonPositiveScanRange),
            _ => Ok(()),
        }
    }

    /// The stage's angle parameter: θ for fixed stages, θ0 for scanned ones.
    pub fn angle(&self) -> T {
        match *self {
            ChannelStage::FixedAngle { theta } => theta,
            ChannelStage::UniformScan { theta0 } => theta0,
        }
    }

    pub fn with_angle(&self, angle: T) -> Self {
        match self {
            ChannelStage::FixedAngle { .. } => ChannelStage::FixedAngle { theta: angle },
            ChannelStage::UniformScan { .. } => ChannelStage::UniformScan { theta0: angle },
        }
    }

    pub fn is_scan(&self) -> bool {
        matches!(self, ChannelStage::UniformScan { .. })
    }

    /// `fixed:<rad>rad` / `scan:<rad>rad`.
    pub fn label(&self) -> String {
        match self {
            ChannelStage::FixedAngle { theta } => format!("fixed:{theta}rad"),
            ChannelStage::UniformScan { theta0 } => format!("scan:{theta0}rad"),
        }
    }
}

/// Cascade of n channel pairs inserted before the HBT split; n = 0 is plain HBT.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CascadeConfig<T> {
    pub stages: Vec<ChannelStage<T>>,
}

impl<T: Scalar> CascadeConfig<T> {
    pub fn hbt() -> Self {
        Self { stages: Vec::new() }
    }

    pub fn new(stages: Vec<ChannelStage<T>>) -> Result<Self, ConfigError> {
        let c = Self { stages };
        c.validate()?;
        Ok(c)
    }

    pub fn single(stage: ChannelStage<T>) -> Result<Self, ConfigError> {
        Self::new(vec![stage])
    }

    /// `n` identical scanned stages of full range `theta0`.
    pub fn scanned(n: usize, theta0: T) -> Result<Self, ConfigError> {
        Self::new(vec![ChannelStage::UniformScan { theta0 }; n])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.stages.iter().try_for_each(ChannelStage::validate)
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn label(&self) -> String {
        if self.stages.is_empty() {
            return "none".to_owned();
        }
        self.stages.iter().map(ChannelStage::label).collect::<Vec<_>>().join(",")
    }
}

/// Where a curve came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveMeta {
    pub model: String,
    pub params: Vec<(String, f64)>,
    pub realizations: Option<u64>,
    pub seed: Option<u64>,
}

impl CurveMeta {
    pub fn named(model: impl Into<String>) -> Self {
        Self { model: model.into(), ..Self::default() }
    }

    pub fn param(mut self, name: impl Into<String>, value: f64) -> Self {
        self.params.push((name.into(), value));
        self
    }
}

/// Sampled g2(Δx) with per-point standard errors (all zero for closed-form curves).
#[derive(Debug, Clone, PartialEq)]
pub struct G2Curve<T> {
    pub dx: Vec<T>,
    pub g2: Vec<T>,
    pub se: Vec<T>,
    pub meta: CurveMeta,
}

impl<T: Scalar> G2Curve<T> {
    pub fn new(dx: Vec<T>, g2: Vec<T>, se: Vec<T>, meta: CurveMeta) -> Result<Self, ConfigError> {
        if dx.len() != g2.len() || dx.len() != se.len() {
            return Err(ConfigError::CurveLength { dx: dx.len(), g2: g2.len(), se: se.len() });
        }
        if let Some(i) = se.iter().position(|s| !(*s >= T::zero()) || !s.is_finite()) {
            return Err(ConfigError::NegativeStandardError(i));
        }
        Ok(Self { dx, g2, se, meta })
    }

    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest_index(&self, x: T) -> Option<usize> {
        (0..self.dx.len()).min_by(|&a, &b| (self.dx[a] - x).abs().partial_cmp(&(self.dx[b] - x).abs()).unwrap_or(std::cmp::Ordering::Equal))
    }

    pub fn has_uncertainty(&self) -> bool {
        self.se.iter().any(|s| *s > T::zero())
    }
}

pub fn angle_from_degrees<T: Scalar>(degrees: T) -> Result<T, ConfigError> {
    if !degrees.is_finite() {
        return Err(ConfigError::NonFiniteAngle);
    }
    Ok(degrees.to_radians())
}

pub fn degrees_from_angle<T: Scalar>(radians: T) -> T {
    radians.to_degrees()
}

/// `n` evenly spaced points from `start` to `stop` inclusive.
///
/// Points are placed as `mid + half·t` with `t` antisymmetric in the index, so
/// a range symmetric about zero yields exactly negated pairs and hits zero
/// exactly when `n` is odd.
pub fn linspace<T: Scalar>(start: T, stop: T, n: usize) -> Result<Vec<T>, ConfigError> {
    if n < 2 {
        return Err(ConfigError::GridTooShort(n));
    }
    let mid = (start + stop) / T::lit(2.0);
    let half = (stop - start) / T::lit(2.0);
    let denom = T::from_usize(n - 1);
    Ok((0..n)
        .map(|i| {
            let t = T::lit(2.0 * i as f64 - (n - 1) as f64) / denom;
            mid + half * t
        })
        .collect())
}
