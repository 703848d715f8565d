//! Named presets: λ = 780 nm, z = 1.79 m, R = 356 µm, ±8 mm grid, M = 2·10⁵, seed 42.

use thiserror::Error;

use crate::analytic::{evaluate_curve, AnalyticError, AnalyticModel};
use crate::correlator::{compare_curves, ComparisonReport, CorrelatorError};
use crate::model::{angle_from_degrees, linspace, CascadeConfig, ChannelStage, G2Curve, OpticalConfig};
use crate::scalar::Scalar;
use crate::speckle::{run_simulation, McRunConfig, SimError};

pub const WAVELENGTH_M: f64 = 780e-9;
pub const DISTANCE_M: f64 = 1.79;
pub const SOURCE_WIDTH_M: f64 = 356e-6;
pub const GRID_HALF_SPAN_M: f64 = 8e-3;
pub const GRID_POINTS: usize = 161;
pub const REALIZATIONS: u64 = 200_000;
pub const SEED: u64 = 42;
/// Crossing angle of the fixed-angle preset, degrees.
pub const FRINGE_THETA_DEG: f64 = 0.007;
/// Scan range of the single scanned preset, degrees.
pub const SCAN_THETA0_DEG: f64 = 0.026;
/// Scan range of each cascade stage, degrees.
pub const CASCADE_THETA0_DEG: f64 = 0.022;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Compare(#[from] CorrelatorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: &'static str,
    pub run: McRunConfig<T>,
    pub reference: AnalyticModel<T>,
    pub description: &'static str,
}

fn deg<T: Scalar>(d: f64) -> T {
    angle_from_degrees(T::lit(d)).expect("finite preset angle")
}

/// λ = 780 nm, z = 1.79 m, R = 356 µm, 161 points over ±8 mm.
pub fn default_config<T: Scalar>() -> OpticalConfig<T> {
    let half = T::lit(GRID_HALF_SPAN_M);
    OpticalConfig {
        wavelength: T::lit(WAVELENGTH_M),
        source_width: T::lit(SOURCE_WIDTH_M),
        distance: T::lit(DISTANCE_M),
        dx_grid: linspace(-half, half, GRID_POINTS).expect("preset grid"),
    }
}

fn make<T: Scalar>(name: &'static str, description: &'static str, stages: Vec<ChannelStage<T>>) -> Scenario<T> {
    let cfg = default_config::<T>();
    let stages = CascadeConfig::new(stages).expect("preset stages");
    let reference = AnalyticModel::for_stages(cfg.clone(), stages.clone()).expect("preset model");
    Scenario { name, run: McRunConfig::new(cfg, stages, REALIZATIONS, SEED), reference, description }
}

pub fn builtin_scenarios<T: Scalar>() -> Vec<Scenario<T>> {
    let scan = |d: f64| ChannelStage::UniformScan { theta0: deg(d) };
    vec![
        make("hbt-baseline", "Plain HBT interferometer, no channel pairs.", vec![]),
        make(
            "fringe-fig3",
            "One channel pair at a fixed 0.007° crossing angle: two-photon fringe.",
            vec![ChannelStage::FixedAngle { theta: deg(FRINGE_THETA_DEG) }],
        ),
        make("scanned-fig4", "One channel pair with the angle swept over 0.026°: super-bunching peak.", vec![scan(SCAN_THETA0_DEG)]),
        make("cascade-n2", "Two cascaded scanned pairs, 0.022° each.", vec![scan(CASCADE_THETA0_DEG); 2]),
        make("cascade-n3", "Three cascaded scanned pairs, 0.022° each.", vec![scan(CASCADE_THETA0_DEG); 3]),
    ]
}

pub fn scenario_by_name<T: Scalar>(name: &str) -> Result<Scenario<T>, ScenarioError> {
    builtin_scenarios().into_iter().find(|s| s.name == name).ok_or_else(|| ScenarioError::Unknown(name.to_owned()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome<T> {
    pub mc: G2Curve<T>,
    pub reference: G2Curve<T>,
    pub report: ComparisonReport<T>,
}

/// Simulates the scenario, evaluates its closed-form reference on the same grid
/// and compares the two.
pub fn run_scenario<T: Scalar>(s: &Scenario<T>) -> Result<ScenarioOutcome<T>, ScenarioError> {
    let mc = run_simulation(&s.run)?;
    let reference = evaluate_curve(&s.reference)?;
    let report = compare_curves(&mc, &reference)?;
    Ok(ScenarioOutcome { mc, reference, report })
}
