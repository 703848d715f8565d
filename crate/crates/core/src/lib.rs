//! Two-photon super bunching of thermal light.
//!
//! Closed-form second-order coherence for a Hanbury Brown–Twiss interferometer
//! with cascaded pairs of mutually incoherent channels ([`analytic`]), a
//! speckle Monte Carlo that reproduces those curves from a random source
//! ([`speckle`], [`correlator`]), least-squares fitting of the model family
//! ([`fitting`]) and named presets ([`scenario`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! unsuffixed aliases below are the `f64` instantiations.

// `!(x > 0)` is the NaN-rejecting form of a positivity check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod correlator;
pub mod fitting;
pub mod model;
pub mod scalar;
pub mod scenario;
pub mod speckle;

pub use scalar::Scalar;

pub type OpticalConfig = model::OpticalConfig<f64>;
pub type ChannelStage = model::ChannelStage<f64>;
pub type CascadeConfig = model::CascadeConfig<f64>;
pub type G2Curve = model::G2Curve<f64>;
pub type AnalyticModel = analytic::AnalyticModel<f64>;
pub type CorrAccumulator = correlator::CorrAccumulator<f64>;
pub type ComparisonReport = correlator::ComparisonReport<f64>;
pub type SourceModel = speckle::SourceModel<f64>;
pub type McRunConfig = speckle::McRunConfig<f64>;
pub type FitModel = fitting::FitModel<f64>;
pub type FitResult = fitting::FitResult<f64>;
pub type FitReport = fitting::FitReport<f64>;
pub type Scenario = scenario::Scenario<f64>;

pub type OpticalConfigF32 = model::OpticalConfig<f32>;
pub type G2CurveF32 = model::G2Curve<f32>;
pub type AnalyticModelF32 = analytic::AnalyticModel<f32>;
pub type McRunConfigF32 = speckle::McRunConfig<f32>;
pub type FitModelF32 = fitting::FitModel<f32>;
