//! Closed-form normalized second-order coherence of thermal light, for the
//! plain HBT arrangement and with channel pairs inserted before the split.

use thiserror::Error;

use crate::model::{validate_config, CascadeConfig, ChannelStage, ConfigError, CurveMeta, G2Curve, OpticalConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fringe period is infinite for theta = 0")]
    ZeroAngle,
    #[error("model kind {kind:?} is inconsistent with {stages} stage(s)")]
    StageMismatch { kind: ModelKind, stages: usize },
    #[error("curve too short to contain a tail region ({0} points, need at least 10)")]
    NoTail(usize),
    #[error("background estimate is not positive")]
    NonPositiveBackground,
}

/// sin(u)/u with the removable singularity filled: sinc(0) = 1.
#[inline]
pub fn sinc<T: Scalar>(u: T) -> T {
    if u == T::zero() {
        T::one()
    } else {
        u.sin() / u
    }
}

/// |g1|² of a uniform slit of full width R seen at distance z: sinc²(kRΔx/2z).
#[inline]
pub fn envelope<T: Scalar>(cfg: &OpticalConfig<T>, dx: T) -> T {
    let s = sinc(cfg.wavenumber() * cfg.source_width * dx / (T::lit(2.0) * cfg.distance));
    s * s
}

/// Modulation f(Δx) contributed by one channel pair: cos(kθΔx) for a fixed
/// crossing angle, sinc(kθ0Δx/2) once the angle is swept uniformly.
#[inline]
pub fn stage_modulation<T: Scalar>(stage: &ChannelStage<T>, k: T, dx: T) -> T {
    match *stage {
        ChannelStage::FixedAngle { theta } => (k * theta * dx).cos(),
        ChannelStage::UniformScan { theta0 } => sinc(k * theta0 * dx / T::lit(2.0)),
    }
}

/// Traditional HBT: 1 + sinc²(kRΔx/2z), in [1, 2].
pub fn g2_hbt<T: Scalar>(cfg: &OpticalConfig<T>, dx: T) -> T {
    T::one() + envelope(cfg, dx)
}

/// One channel pair at fixed crossing angle θ: the HBT curve times
/// 1 + ½cos(kθΔx). Peaks at 3, dips to 0.5·g2_hbt at the half period.
pub fn g2_fringe<T: Scalar>(cfg: &OpticalConfig<T>, theta: T, dx: T) -> T {
    g2_cascade_stages(cfg, &[ChannelStage::FixedAngle { theta }], dx)
}

/// One channel pair with θ swept over [−θ0/2, θ0/2].
pub fn g2_scanned<T: Scalar>(cfg: &OpticalConfig<T>, theta0: T, dx: T) -> T {
    g2_cascade_stages(cfg, &[ChannelStage::UniformScan { theta0 }], dx)
}

/// n cascaded channel pairs: [1 + sinc²]·∏[1 + ½fⱼ]. Equals 2·1.5ⁿ at Δx = 0.
pub fn g2_cascade<T: Scalar>(cfg: &OpticalConfig<T>, stages: &CascadeConfig<T>, dx: T) -> T {
    g2_cascade_stages(cfg, &stages.stages, dx)
}

fn g2_cascade_stages<T: Scalar>(cfg: &OpticalConfig<T>, stages: &[ChannelStage<T>], dx: T) -> T {
    let k = cfg.wavenumber();
    let half = T::lit(0.5);
    stages.iter().fold(g2_hbt(cfg, dx), |acc, s| acc * (T::one() + half * stage_modulation(s, k, dx)))
}

/// Period 2π/(kθ) = λ/θ of the two-photon fringe.
pub fn fringe_period<T: Scalar>(cfg: &OpticalConfig<T>, theta: T) -> Result<T, AnalyticError> {
    if theta == T::zero() {
        return Err(AnalyticError::ZeroAngle);
    }
    if !theta.is_finite() {
        return Err(ConfigError::NonFiniteAngle.into());
    }
    Ok((cfg.wavelength / theta).abs())
}

/// Ratio of the peak (max over the innermost 5% of points by |Δx|) to the
/// background (mean over the outermost 10%).
///
/// The grid has to reach several speckle widths λz/R for the tail to be flat;
/// that is the caller's responsibility.
pub fn peak_to_background<T: Scalar>(curve: &G2Curve<T>) -> Result<T, AnalyticError> {
    let (peak, background) = peak_and_background(curve)?;
    Ok(peak / background)
}

/// (peak, background) as used by [`peak_to_background`].
pub fn peak_and_background<T: Scalar>(curve: &G2Curve<T>) -> Result<(T, T), AnalyticError> {
    let n = curve.len();
    if n < 10 {
        return Err(AnalyticError::NoTail(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| curve.dx[a].abs().partial_cmp(&curve.dx[b].abs()).unwrap_or(std::cmp::Ordering::Equal));
    let n_peak = n.div_ceil(20);
    let n_tail = n.div_ceil(10);
    let peak = order[..n_peak].iter().map(|&i| curve.g2[i]).fold(T::neg_infinity(), T::max);
    let tail = &order[n - n_tail..];
    let background = tail.iter().fold(T::zero(), |acc, &i| acc + curve.g2[i]) / T::from_usize(tail.len());
    if !(background > T::zero()) {
        return Err(AnalyticError::NonPositiveBackground);
    }
    Ok((peak, background))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Hbt,
    Fringe,
    Scanned,
    Cascade,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Hbt => "hbt",
            ModelKind::Fringe => "fringe",
            ModelKind::Scanned => "scanned",
            ModelKind::Cascade => "cascade",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hbt" => Some(ModelKind::Hbt),
            "fringe" => Some(ModelKind::Fringe),
            "scanned" => Some(ModelKind::Scanned),
            "cascade" => Some(ModelKind::Cascade),
            _ => None,
        }
    }
}

/// A closed-form model bound to its geometry and channel stages.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel<T> {
    pub kind: ModelKind,
    pub cfg: OpticalConfig<T>,
    pub stages: CascadeConfig<T>,
}

impl<T: Scalar> AnalyticModel<T> {
    /// Checks that `stages` fit `kind`: none for Hbt, one fixed stage for
    /// Fringe, one scanned stage for Scanned, anything for Cascade.
    pub fn new(kind: ModelKind, cfg: OpticalConfig<T>, stages: CascadeConfig<T>) -> Result<Self, AnalyticError> {
        let cfg = validate_config(cfg)?;
        stages.validate()?;
        let ok = match kind {
            ModelKind::Hbt => stages.is_empty(),
            ModelKind::Fringe => matches!(stages.stages.as_slice(), [ChannelStage::FixedAngle { .. }]),
            ModelKind::Scanned => matches!(stages.stages.as_slice(), [ChannelStage::UniformScan { .. }]),
            ModelKind::Cascade => true,
        };
        if !ok {
            return Err(AnalyticError::StageMismatch { kind, stages: stages.len() });
        }
        Ok(Self { kind, cfg, stages })
    }

    pub fn hbt(cfg: OpticalConfig<T>) -> Result<Self, AnalyticError> {
        Self::new(ModelKind::Hbt, cfg, CascadeConfig::hbt())
    }

    pub fn fringe(cfg: OpticalConfig<T>, theta: T) -> Result<Self, AnalyticError> {
        Self::new(ModelKind::Fringe, cfg, CascadeConfig::single(ChannelStage::FixedAngle { theta })?)
    }

    pub fn scanned(cfg: OpticalConfig<T>, theta0: T) -> Result<Self, AnalyticError> {
        Self::new(ModelKind::Scanned, cfg, CascadeConfig::single(ChannelStage::UniformScan { theta0 })?)
    }

    pub fn cascade(cfg: OpticalConfig<T>, stages: CascadeConfig<T>) -> Result<Self, AnalyticError> {
        Self::new(ModelKind::Cascade, cfg, stages)
    }

    /// The model kind that best describes an arbitrary cascade.
    pub fn for_stages(cfg: OpticalConfig<T>, stages: CascadeConfig<T>) -> Result<Self, AnalyticError> {
        let kind = match stages.stages.as_slice() {
            [] => ModelKind::Hbt,
            [ChannelStage::FixedAngle { .. }] => ModelKind::Fringe,
            [ChannelStage::UniformScan { .. }] => ModelKind::Scanned,
            _ => ModelKind::Cascade,
        };
        Self::new(kind, cfg, stages)
    }

    pub fn value(&self, dx: T) -> T {
        g2_cascade(&self.cfg, &self.stages, dx)
    }

    pub fn meta(&self) -> CurveMeta {
        let cfg = &self.cfg;
        let mut meta = CurveMeta::named(self.kind.name())
            .param("wavelength_m", cfg.wavelength.to_f64_lossy())
            .param("source_width_m", cfg.source_width.to_f64_lossy())
            .param("distance_m", cfg.distance.to_f64_lossy());
        for (j, s) in self.stages.stages.iter().enumerate() {
            let key = if s.is_scan() { "theta0_rad" } else { "theta_rad" };
            meta = meta.param(format!("stage{}_{key}", j + 1), s.angle().to_f64_lossy());
        }
        meta
    }
}

/// Samples the model over its configured grid.
pub fn evaluate_curve<T: Scalar>(model: &AnalyticModel<T>) -> Result<G2Curve<T>, AnalyticError> {
    let cfg = validate_config(model.cfg.clone())?;
    model.stages.validate()?;
    let g2: Vec<T> = cfg.dx_grid.iter().map(|&dx| model.value(dx)).collect();
    let se = vec![T::zero(); g2.len()];
    Ok(G2Curve::new(cfg.dx_grid, g2, se, model.meta())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{angle_from_degrees, linspace};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cfg() -> OpticalConfig<f64> {
        OpticalConfig { wavelength: 780e-9, source_width: 356e-6, distance: 1.79, dx_grid: vec![0.0] }
    }

    fn deg(d: f64) -> f64 {
        angle_from_degrees(d).unwrap()
    }

    #[test]
    fn sinc_values() {
        assert_eq!(sinc(0.0_f64), 1.0);
        assert!(sinc(PI).abs() < 1e-15);
        assert!((sinc(PI / 2.0) - 2.0 / PI).abs() < 1e-15);
        assert!((sinc(PI / 2.0) - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn hbt_peak_and_first_zero() {
        let c = cfg();
        assert_eq!(g2_hbt(&c, 0.0), 2.0);
        let zero = c.envelope_width();
        assert!((zero - 3.9219e-3).abs() < 1e-7);
        assert!((g2_hbt(&c, zero) - 1.0).abs() < 1e-12);
        assert!((g2_hbt(&c, 10.0) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn fringe_peak_and_half_period() {
        let c = cfg();
        let theta = 1.22173e-4;
        assert_eq!(g2_fringe(&c, theta, 0.0), 3.0);
        let half = 780e-9 / (2.0 * theta);
        assert!((half - 3.1922e-3).abs() < 1e-7);
        let ratio = g2_fringe(&c, theta, half) / g2_hbt(&c, half);
        assert!((ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_angle_fringe_is_scaled_hbt() {
        let c = cfg();
        for dx in [0.0, 1e-3, 2.5e-3, 7e-3] {
            assert!((g2_fringe(&c, 0.0, dx) - 1.5 * g2_hbt(&c, dx)).abs() < 1e-15);
        }
    }

    #[test]
    fn scanned_values() {
        let c = cfg();
        let theta0 = deg(0.022);
        assert_eq!(g2_scanned(&c, theta0, 0.0), 3.0);
        let dx = 780e-9 / theta0;
        assert!((dx - 2.0314e-3).abs() < 1e-7);
        assert!((g2_scanned(&c, theta0, dx) - g2_hbt(&c, dx)).abs() < 1e-12);
        assert!((g2_scanned(&c, theta0, 50.0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn cascade_peaks() {
        let c = cfg();
        let theta0 = deg(0.022);
        assert_eq!(g2_cascade(&c, &CascadeConfig::hbt(), 0.0), 2.0);
        assert_eq!(g2_cascade(&c, &CascadeConfig::scanned(2, theta0).unwrap(), 0.0), 4.5);
        assert_eq!(g2_cascade(&c, &CascadeConfig::scanned(3, theta0).unwrap(), 0.0), 6.75);
    }

    #[test]
    fn fringe_periods() {
        let c = cfg();
        assert!((fringe_period(&c, 1.22173e-4).unwrap() - 6.3844e-3).abs() < 1e-7);
        assert!((fringe_period(&c, 2.44346e-4).unwrap() - 3.1922e-3).abs() < 1e-7);
        assert_eq!(fringe_period(&c, 0.0), Err(AnalyticError::ZeroAngle));
    }

    #[test]
    fn peak_to_background_of_decayed_curves() {
        let c = cfg();
        let span = 10.0 * c.envelope_width();
        let c = c.with_grid(linspace(0.0, span, 401).unwrap());
        let hbt = evaluate_curve(&AnalyticModel::hbt(c.clone()).unwrap()).unwrap();
        assert!((peak_to_background(&hbt).unwrap() - 2.0).abs() < 5e-3);
        let scanned = evaluate_curve(&AnalyticModel::scanned(c.clone(), deg(0.022)).unwrap()).unwrap();
        assert!((peak_to_background(&scanned).unwrap() - 3.0).abs() < 1e-2);
        let casc = AnalyticModel::cascade(c, CascadeConfig::scanned(2, deg(0.022)).unwrap()).unwrap();
        let casc = evaluate_curve(&casc).unwrap();
        assert!((peak_to_background(&casc).unwrap() - 4.5).abs() < 2e-2);
    }

    #[test]
    fn peak_to_background_needs_a_tail() {
        let c = cfg().with_grid(vec![0.0, 1e-3, 2e-3]);
        let curve = evaluate_curve(&AnalyticModel::hbt(c).unwrap()).unwrap();
        assert_eq!(peak_to_background(&curve), Err(AnalyticError::NoTail(3)));
    }

    #[test]
    fn model_kind_consistency() {
        let c = cfg();
        assert!(AnalyticModel::new(ModelKind::Hbt, c.clone(), CascadeConfig::scanned(1, 1e-4).unwrap()).is_err());
        assert!(AnalyticModel::new(ModelKind::Fringe, c.clone(), CascadeConfig::scanned(1, 1e-4).unwrap()).is_err());
        assert!(AnalyticModel::new(ModelKind::Scanned, c, CascadeConfig::scanned(1, 1e-4).unwrap()).is_ok());
    }

    #[test]
    fn evaluate_over_single_point() {
        let curve = evaluate_curve(&AnalyticModel::hbt(cfg()).unwrap()).unwrap();
        assert_eq!(curve.g2, vec![2.0]);
        assert_eq!(curve.se, vec![0.0]);
        assert_eq!(curve.meta.model, "hbt");
    }

    #[test]
    fn fig3_fringe_curve_oscillates_with_the_predicted_period() {
        // Successive maxima of the fringe factor sit one period apart.
        let theta = deg(0.007);
        let c = cfg().with_grid(linspace(0.0, 20e-3, 20001).unwrap());
        let m = AnalyticModel::fringe(c, theta).unwrap();
        let curve = evaluate_curve(&m).unwrap();
        let ratio: Vec<f64> = curve.dx.iter().zip(&curve.g2).map(|(&dx, &g)| g / g2_hbt(&m.cfg, dx)).collect();
        let maxima: Vec<f64> =
            (1..ratio.len() - 1).filter(|&i| ratio[i] > ratio[i - 1] && ratio[i] >= ratio[i + 1]).map(|i| curve.dx[i]).collect();
        assert!(!maxima.is_empty());
        assert!((maxima[0] - 6.3844e-3).abs() < 2e-6);
    }

    #[test]
    fn works_in_single_precision() {
        let c = OpticalConfig { wavelength: 780e-9_f32, source_width: 356e-6, distance: 1.79, dx_grid: vec![0.0] };
        assert_eq!(g2_scanned(&c, 3.8e-4, 0.0), 3.0_f32);
        assert!((g2_hbt(&c, c.envelope_width()) - 1.0).abs() < 1e-5);
    }

    fn midpoint_scan_average(c: &OpticalConfig<f64>, theta0: f64, dx: f64, n: usize) -> f64 {
        let h = theta0 / n as f64;
        (0..n).map(|i| g2_fringe(c, -theta0 / 2.0 + (i as f64 + 0.5) * h, dx)).sum::<f64>() / n as f64
    }

    #[test]
    fn fringe_averaged_over_scan_equals_scanned_model() {
        let c = cfg();
        let theta0 = deg(0.022);
        for dx in linspace(-8e-3, 8e-3, 41).unwrap() {
            let avg = midpoint_scan_average(&c, theta0, dx, 10_000);
            assert!((avg - g2_scanned(&c, theta0, dx)).abs() < 1e-6, "dx={dx}");
        }
    }

    proptest! {
        #[test]
        fn models_are_even(dx in -2e-2f64..2e-2, theta in -1e-3f64..1e-3, theta0 in 1e-6f64..1e-3) {
            let c = cfg();
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
            prop_assert!(rel(g2_hbt(&c, dx), g2_hbt(&c, -dx)));
            prop_assert!(rel(g2_fringe(&c, theta, dx), g2_fringe(&c, theta, -dx)));
            prop_assert!(rel(g2_scanned(&c, theta0, dx), g2_scanned(&c, theta0, -dx)));
        }

        #[test]
        fn bounds_hold(dx in -5e-2f64..5e-2, theta in -1e-3f64..1e-3) {
            let c = cfg();
            let h = g2_hbt(&c, dx);
            prop_assert!((1.0..=2.0).contains(&h));
            let f = g2_fringe(&c, theta, dx);
            prop_assert!((0.5..=3.0).contains(&f));
        }

        #[test]
        fn fringe_factorizes_over_hbt(dx in -2e-2f64..2e-2, theta in -1e-3f64..1e-3) {
            let c = cfg();
            let k = c.wavenumber();
            let ratio = g2_fringe(&c, theta, dx) / g2_hbt(&c, dx);
            let expected = 1.0 + 0.5 * (k * theta * dx).cos();
            prop_assert!((ratio - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }

        #[test]
        fn cascade_reduces_to_single_models(dx in -2e-2f64..2e-2, theta0 in 1e-6f64..1e-3) {
            let c = cfg();
            let one = CascadeConfig::scanned(1, theta0).unwrap();
            prop_assert_eq!(g2_cascade(&c, &one, dx), g2_scanned(&c, theta0, dx));
            prop_assert_eq!(g2_cascade(&c, &CascadeConfig::hbt(), dx), g2_hbt(&c, dx));
        }
    }
}
