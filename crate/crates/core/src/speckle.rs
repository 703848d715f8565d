//! Monte Carlo speckle engine.
//!
//! Each realization draws fresh complex weights for a line of discrete emitters,
//! propagates them to the detector plane with the Fresnel kernel, multiplies
//! in the channel-pair modulation and hands detector intensities to the
//! correlator. Realization `r` of a run with seed `s` always uses ChaCha8
//! stream `r` of key `s`, so results do not depend on scheduling.

use std::num::NonZeroUsize;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::correlator::{batch_len_for, CorrAccumulator, CorrelatorError};
use crate::model::{validate_config, CascadeConfig, ChannelStage, ConfigError, CurveMeta, G2Curve, OpticalConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("realization count must be at least 1")]
    NoRealizations,
    #[error("source needs at least 16 emitters, got {0}")]
    TooFewEmitters(usize),
    #[error("source amplitude must be finite and positive")]
    BadAmplitude,
    #[error(transparent)]
    Correlator(#[from] CorrelatorError),
}

/// Statistics of the per-emitter complex weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceStatistics {
    /// Circular complex Gaussian with E|c|² = A²: thermal light for any emitter count.
    #[default]
    ComplexGaussian,
    /// Fixed modulus A, uniform phase. Tends to thermal statistics only as the
    /// emitter count grows (g2(0) = 2 − 1/N).
    RandomPhase,
}

/// Uniform line source of discrete emitters.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel<T> {
    pub n_points: usize,
    pub amplitude: T,
    pub statistics: SourceStatistics,
}

impl<T: Scalar> Default for SourceModel<T> {
    fn default() -> Self {
        Self { n_points: 256, amplitude: T::one(), statistics: SourceStatistics::ComplexGaussian }
    }
}

impl<T: Scalar> SourceModel<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_points < 16 {
            return Err(SimError::TooFewEmitters(self.n_points));
        }
        if !(self.amplitude > T::zero()) || !self.amplitude.is_finite() {
            return Err(SimError::BadAmplitude);
        }
        Ok(())
    }

    /// Emitter coordinates at the centres of `n_points` equal cells tiling
    /// [−width/2, width/2]; symmetric about 0 with spacing width/n_points.
    pub fn positions(&self, width: T) -> Vec<T> {
        let n = self.n_points;
        let step = width / T::from_usize(n);
        (0..n).map(|i| T::lit(i as f64 - (n - 1) as f64 / 2.0) * step).collect()
    }
}

/// RNG for one realization: stream `index` of the ChaCha8 key derived from `seed`.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.random::<f64>())
}

/// One independent phase per emitter, uniform on [0, 2π).
pub fn draw_source_phases<T: Scalar, R: Rng + ?Sized>(rng: &mut R, source: &SourceModel<T>) -> Vec<T> {
    (0..source.n_points)
        .map(|_| {
            let p = T::TAU() * uniform::<T, R>(rng);
            // Guards against rounding up to 2π in single precision.
            if p >= T::TAU() {
                T::zero()
            } else {
                p
            }
        })
        .collect()
}

/// Complex emitter weights: phases from [`draw_source_phases`], then moduli.
pub fn draw_emitter_weights<T: Scalar, R: Rng + ?Sized>(rng: &mut R, source: &SourceModel<T>) -> Vec<Complex<T>> {
    let phases = draw_source_phases(rng, source);
    phases
        .into_iter()
        .map(|phi| {
            let modulus = match source.statistics {
                SourceStatistics::RandomPhase => source.amplitude,
                SourceStatistics::ComplexGaussian => {
                    // Rayleigh modulus: |c|² exponential with mean A².
                    let u: f64 = rng.random();
                    source.amplitude * T::lit((-(1.0 - u).ln()).sqrt())
                }
            };
            Complex::from_polar(modulus, phi)
        })
        .collect()
}

/// Field at detector coordinate `x`: Σ_s w_s·exp(ik(x − x_s)²/2z).
///
/// The constant prefactors of the Fresnel Green's function are dropped; they
/// cancel in the normalized g2.
pub fn propagate_field<T: Scalar>(positions: &[T], weights: &[Complex<T>], cfg: &OpticalConfig<T>, x: T) -> Complex<T> {
    let scale = cfg.wavenumber() / (T::lit(2.0) * cfg.distance);
    positions.iter().zip(weights).fold(Complex::new(T::zero(), T::zero()), |acc, (&xs, &w)| {
        let d = x - xs;
        acc + w * Complex::cis(scale * d * d)
    })
}

/// Per-realization sample of one channel pair: the random relative phase φ and
/// the crossing angle θ in effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDraw<T> {
    pub phase: T,
    pub theta: T,
}

/// φ uniform on [0, 2π) for every stage; θ fixed, or uniform on [−θ0/2, θ0/2]
/// for scanned stages.
pub fn draw_stage_samples<T: Scalar, R: Rng + ?Sized>(rng: &mut R, stages: &CascadeConfig<T>) -> Vec<StageDraw<T>> {
    stages
        .stages
        .iter()
        .map(|stage| {
            let phase = T::TAU() * uniform::<T, R>(rng);
            let theta = match *stage {
                ChannelStage::FixedAngle { theta } => theta,
                ChannelStage::UniformScan { theta0 } => theta0 * (uniform::<T, R>(rng) - T::lit(0.5)),
            };
            StageDraw { phase, theta }
        })
        .collect()
}

/// E_out(x) = E_in(x)·∏ⱼ(1 + e^{i(φⱼ + kθⱼx)}): each pair superposes the
/// field with a copy tilted by θⱼ and carrying the random phase φⱼ.
pub fn apply_channel_stages<T: Scalar>(field: Complex<T>, draws: &[StageDraw<T>], k: T, x: T) -> Complex<T> {
    draws.iter().fold(field, |acc, d| acc * (Complex::new(T::one(), T::zero()) + Complex::cis(d.phase + k * d.theta * x)))
}

/// A complete Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct McRunConfig<T> {
    pub cfg: OpticalConfig<T>,
    pub stages: CascadeConfig<T>,
    pub source: SourceModel<T>,
    pub realizations: u64,
    pub seed: u64,
    /// Worker threads; results are identical for any value.
    pub workers: usize,
}

impl<T: Scalar> McRunConfig<T> {
    pub fn new(cfg: OpticalConfig<T>, stages: CascadeConfig<T>, realizations: u64, seed: u64) -> Self {
        Self { cfg, stages, source: SourceModel::default(), realizations, seed, workers: default_workers() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        validate_config(self.cfg.clone())?;
        self.stages.validate()?;
        self.source.validate()?;
        if self.realizations == 0 {
            return Err(SimError::NoRealizations);
        }
        Ok(())
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1)
}

/// Precomputed propagation from the emitters to every distinct detector coordinate.
///
/// exp(ik(x − x_s)²/2z) = exp(ikx²/2z)·exp(−ikx·x_s/z)·exp(ikx_s²/2z): the source
/// chirp folds into the weights, the detector chirp is applied per output, and
/// the cross term is a fixed matrix.
struct Propagator<T> {
    k: T,
    source: SourceModel<T>,
    src_chirp: Vec<Complex<T>>,
    det_x: Vec<T>,
    det_chirp: Vec<Complex<T>>,
    kern_re: Vec<T>,
    kern_im: Vec<T>,
    /// (index of x1 = +dx/2, index of x2 = −dx/2) per grid point.
    pairs: Vec<(usize, usize)>,
}

struct Scratch<T> {
    w_re: Vec<T>,
    w_im: Vec<T>,
    intensity: Vec<T>,
    i1: Vec<T>,
    i2: Vec<T>,
}

impl<T: Scalar> Propagator<T> {
    fn new(cfg: &OpticalConfig<T>, source: &SourceModel<T>) -> Self {
        let k = cfg.wavenumber();
        let two = T::lit(2.0);
        let xs = source.positions(cfg.source_width);
        let chirp = k / (two * cfg.distance);
        let src_chirp = xs.iter().map(|&x| Complex::cis(chirp * x * x)).collect();

        let mut det_x: Vec<T> = cfg.dx_grid.iter().flat_map(|&dx| [dx / two, -dx / two]).collect();
        det_x.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
        det_x.dedup();
        let find = |x: T| det_x.binary_search_by(|p| p.partial_cmp(&x).expect("finite grid")).expect("position present");
        let pairs = cfg.dx_grid.iter().map(|&dx| (find(dx / two), find(-dx / two))).collect();
        let det_chirp = det_x.iter().map(|&x| Complex::cis(chirp * x * x)).collect();

        let n = xs.len();
        let mut kern_re = Vec::with_capacity(det_x.len() * n);
        let mut kern_im = Vec::with_capacity(det_x.len() * n);
        for &x in &det_x {
            for &s in &xs {
                let c = Complex::cis(-k * x * s / cfg.distance);
                kern_re.push(c.re);
                kern_im.push(c.im);
            }
        }
        Self { k, source: source.clone(), src_chirp, det_x, det_chirp, kern_re, kern_im, pairs }
    }

    fn scratch(&self) -> Scratch<T> {
        let n = self.source.n_points;
        Scratch {
            w_re: vec![T::zero(); n],
            w_im: vec![T::zero(); n],
            intensity: vec![T::zero(); self.det_x.len()],
            i1: vec![T::zero(); self.pairs.len()],
            i2: vec![T::zero(); self.pairs.len()],
        }
    }

    /// Fields at every distinct detector coordinate for one realization.
    fn fields(&self, weights: &[Complex<T>], scratch: &mut Scratch<T>) -> Vec<Complex<T>> {
        self.load_weights(weights, scratch);
        (0..self.det_x.len()).map(|d| self.det_chirp[d] * self.project(d, scratch)).collect()
    }

    fn load_weights(&self, weights: &[Complex<T>], scratch: &mut Scratch<T>) {
        for ((w, c), (re, im)) in weights.iter().zip(&self.src_chirp).zip(scratch.w_re.iter_mut().zip(scratch.w_im.iter_mut())) {
            let v = *w * *c;
            *re = v.re;
            *im = v.im;
        }
    }

    /// Σ_s w_s·K[d, s] with four independent partial sums.
    #[inline]
    fn project(&self, d: usize, scratch: &Scratch<T>) -> Complex<T> {
        let n = self.source.n_points;
        let kr = &self.kern_re[d * n..(d + 1) * n];
        let ki = &self.kern_im[d * n..(d + 1) * n];
        let mut re = [T::zero(); 4];
        let mut im = [T::zero(); 4];
        let chunks = n / 4 * 4;
        for base in (0..chunks).step_by(4) {
            for l in 0..4 {
                let (a, b) = (kr[base + l], ki[base + l]);
                let (c, e) = (scratch.w_re[base + l], scratch.w_im[base + l]);
                re[l] += a * c - b * e;
                im[l] += a * e + b * c;
            }
        }
        for s in chunks..n {
            let (a, b) = (kr[s], ki[s]);
            let (c, e) = (scratch.w_re[s], scratch.w_im[s]);
            re[0] += a * c - b * e;
            im[0] += a * e + b * c;
        }
        Complex::new((re[0] + re[1]) + (re[2] + re[3]), (im[0] + im[1]) + (im[2] + im[3]))
    }

    /// Draws realization `index` and fills the detector intensities in `scratch`.
    fn realize(&self, stages: &CascadeConfig<T>, seed: u64, index: u64, scratch: &mut Scratch<T>) {
        let mut rng = realization_rng(seed, index);
        let weights = draw_emitter_weights(&mut rng, &self.source);
        let draws = draw_stage_samples(&mut rng, stages);
        self.load_weights(&weights, scratch);
        for d in 0..self.det_x.len() {
            let field = self.det_chirp[d] * self.project(d, scratch);
            let out = apply_channel_stages(field, &draws, self.k, self.det_x[d]);
            scratch.intensity[d] = out.norm_sqr();
        }
        for (g, &(a, b)) in self.pairs.iter().enumerate() {
            scratch.i1[g] = scratch.intensity[a];
            scratch.i2[g] = scratch.intensity[b];
        }
    }
}

/// Intensity-correlation Monte Carlo over the configured Δx grid, detectors at ±Δx/2.
///
/// Realizations are split into whole correlator batches and handed out to
/// workers in contiguous blocks; batch records are merged in order, so the
/// curve is bit-identical for any worker count.
pub fn run_simulation<T: Scalar>(run: &McRunConfig<T>) -> Result<G2Curve<T>, SimError> {
    run.validate()?;
    let acc = simulate_accumulator(run)?;
    let mut meta = CurveMeta::named("mc")
        .param("wavelength_m", run.cfg.wavelength.to_f64_lossy())
        .param("source_width_m", run.cfg.source_width.to_f64_lossy())
        .param("distance_m", run.cfg.distance.to_f64_lossy())
        .param("n_points", run.source.n_points as f64);
    for (j, s) in run.stages.stages.iter().enumerate() {
        let key = if s.is_scan() { "theta0_rad" } else { "theta_rad" };
        meta = meta.param(format!("stage{}_{key}", j + 1), s.angle().to_f64_lossy());
    }
    meta.seed = Some(run.seed);
    Ok(acc.finalize(&run.cfg.dx_grid, meta)?)
}

/// The merged accumulator behind [`run_simulation`].
pub fn simulate_accumulator<T: Scalar>(run: &McRunConfig<T>) -> Result<CorrAccumulator<T>, SimError> {
    run.validate()?;
    let prop = Propagator::new(&run.cfg, &run.source);
    let m = run.realizations;
    let batch_len = batch_len_for(m);
    let n_batches = m.div_ceil(batch_len);
    let workers = (run.workers.max(1) as u64).min(n_batches);
    let ranges: Vec<(u64, u64)> = (0..workers)
        .map(|w| {
            let b0 = w * n_batches / workers;
            let b1 = (w + 1) * n_batches / workers;
            (b0 * batch_len, (b1 * batch_len).min(m))
        })
        .collect();

    let work = |(start, end): (u64, u64)| -> Result<CorrAccumulator<T>, SimError> {
        let mut acc = CorrAccumulator::new(run.cfg.dx_grid.len(), batch_len);
        let mut scratch = prop.scratch();
        for r in start..end {
            prop.realize(&run.stages, run.seed, r, &mut scratch);
            acc.accumulate(&scratch.i1, &scratch.i2)?;
        }
        Ok(acc)
    };

    let parts: Vec<Result<CorrAccumulator<T>, SimError>> = if workers == 1 {
        vec![work(ranges[0])]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges.iter().map(|&r| scope.spawn(move || work(r))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let mut merged = CorrAccumulator::new(run.cfg.dx_grid.len(), batch_len);
    for part in parts {
        merged = merged.merge(part?)?;
    }
    Ok(merged)
}

/// Fields at (+Δx/2, −Δx/2) for one grid point.
pub type FieldPair<T> = (Complex<T>, Complex<T>);

/// Complex fields of one realization at the detector coordinates ±Δx/2 for
/// every grid point, before any channel modulation.
pub fn sample_pair_fields<T: Scalar>(run: &McRunConfig<T>, index: u64) -> Result<Vec<FieldPair<T>>, SimError> {
    run.validate()?;
    let prop = Propagator::new(&run.cfg, &run.source);
    let mut scratch = prop.scratch();
    let mut rng = realization_rng(run.seed, index);
    let weights = draw_emitter_weights(&mut rng, &run.source);
    let fields = prop.fields(&weights, &mut scratch);
    Ok(prop.pairs.iter().map(|&(a, b)| (fields[a], fields[b])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::sinc;
    use crate::model::{angle_from_degrees, linspace};

    fn cfg(grid: Vec<f64>) -> OpticalConfig<f64> {
        OpticalConfig { wavelength: 780e-9, source_width: 356e-6, distance: 1.79, dx_grid: grid }
    }

    #[test]
    fn positions_are_cell_centres() {
        let s = SourceModel::<f64>::default();
        let p = s.positions(356e-6);
        assert_eq!(p.len(), 256);
        let step = 356e-6 / 256.0;
        for i in 0..256 {
            assert!((p[i] + p[255 - i]).abs() < 1e-18);
            assert!((p[i] - (-178e-6 + (i as f64 + 0.5) * step)).abs() < 1e-15);
        }
    }

    #[test]
    fn source_validation() {
        let s = SourceModel::<f64> { n_points: 8, ..SourceModel::default() };
        assert_eq!(s.validate(), Err(SimError::TooFewEmitters(8)));
        let s = SourceModel::<f64> { amplitude: 0.0, ..SourceModel::default() };
        assert_eq!(s.validate(), Err(SimError::BadAmplitude));
    }

    #[test]
    fn phases_are_in_range_and_reproducible() {
        let s = SourceModel::<f64>::default();
        let a = draw_source_phases(&mut realization_rng(9, 3), &s);
        let b = draw_source_phases(&mut realization_rng(9, 3), &s);
        assert_eq!(a.len(), 256);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (0.0..std::f64::consts::TAU).contains(p)));
        let c = draw_source_phases(&mut realization_rng(9, 4), &s);
        assert_ne!(a, c);
    }

    #[test]
    fn phasor_mean_vanishes() {
        let s = SourceModel::<f64> { n_points: 1000, ..SourceModel::default() };
        let mut sum = Complex::new(0.0, 0.0);
        for r in 0..1000 {
            for p in draw_source_phases(&mut realization_rng(1, r), &s) {
                sum += Complex::cis(p);
            }
        }
        assert!((sum / 1e6).norm() < 0.005);
    }

    #[test]
    fn single_emitter_on_axis() {
        let c = cfg(vec![0.0]);
        let e = propagate_field(&[0.0], &[Complex::new(2.5, 0.0)], &c, 0.0);
        assert!((e - Complex::new(2.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mean_intensity_is_incoherent_sum() {
        // Both weight statistics: ⟨|E|²⟩ = N·A².
        let c = cfg(vec![0.0]);
        for statistics in [SourceStatistics::RandomPhase, SourceStatistics::ComplexGaussian] {
            let s = SourceModel { n_points: 64, amplitude: 1.5, statistics };
            let pos = s.positions(c.source_width);
            let m = 100_000;
            let mean: f64 = (0..m)
                .map(|r| {
                    let w = draw_emitter_weights(&mut realization_rng(5, r), &s);
                    propagate_field(&pos, &w, &c, 1.3e-3).norm_sqr()
                })
                .sum::<f64>()
                / m as f64;
            let expected = 64.0 * 1.5 * 1.5;
            assert!((mean / expected - 1.0).abs() < 0.03, "{statistics:?}: {mean}");
        }
    }

    #[test]
    fn field_correlation_follows_source_transform() {
        // Ensemble ⟨E(x1)E*(x2)⟩/⟨|E|²⟩ against sinc(kRΔx/2z).
        let grid = linspace(0.0, 6e-3, 7).unwrap();
        let c = cfg(grid.clone());
        let s = SourceModel::<f64> { n_points: 64, ..SourceModel::default() };
        let pos = s.positions(c.source_width);
        let m = 100_000;
        let mut cross = vec![Complex::new(0.0, 0.0); grid.len()];
        let mut power = vec![0.0; grid.len()];
        for r in 0..m {
            let w = draw_emitter_weights(&mut realization_rng(11, r), &s);
            for (g, &dx) in grid.iter().enumerate() {
                let e1 = propagate_field(&pos, &w, &c, dx / 2.0);
                let e2 = propagate_field(&pos, &w, &c, -dx / 2.0);
                cross[g] += e1 * e2.conj();
                power[g] += 0.5 * (e1.norm_sqr() + e2.norm_sqr());
            }
        }
        let k = c.wavenumber();
        for (g, &dx) in grid.iter().enumerate() {
            let g1 = (cross[g] / power[g]).norm();
            let expected = sinc(k * c.source_width * dx / (2.0 * c.distance)).abs();
            assert!((g1 - expected).abs() < 0.01, "dx={dx}: {g1} vs {expected}");
        }
    }

    #[test]
    fn zero_stages_is_identity() {
        let e = Complex::new(0.3, -1.2);
        assert_eq!(apply_channel_stages(e, &[], 8e6, 1e-3), e);
    }

    #[test]
    fn aligned_in_phase_stage_doubles_field() {
        let e = Complex::new(0.3, -1.2);
        let d = [StageDraw { phase: 0.0_f64, theta: 0.0 }];
        for x in [-5e-3, 0.0, 2e-3] {
            assert!((apply_channel_stages(e, &d, 8e6, x) - 2.0 * e).norm() < 1e-15);
        }
    }

    #[test]
    fn random_phase_stage_doubles_mean_power() {
        let stages = CascadeConfig::single(ChannelStage::FixedAngle { theta: 1.22e-4 }).unwrap();
        let e = Complex::new(1.0, 0.5);
        let m = 100_000;
        let mean = (0..m)
            .map(|r| {
                let d = draw_stage_samples(&mut realization_rng(2, r), &stages);
                apply_channel_stages(e, &d, 8e6, 1e-3).norm_sqr() / e.norm_sqr()
            })
            .sum::<f64>()
            / m as f64;
        assert!((mean - 2.0).abs() < 0.04);
    }

    #[test]
    fn stage_draw_statistics() {
        let theta = 1.22173e-4;
        let fixed = CascadeConfig::single(ChannelStage::FixedAngle { theta }).unwrap();
        for r in 0..100 {
            assert_eq!(draw_stage_samples(&mut realization_rng(3, r), &fixed)[0].theta, theta);
        }
        let theta0 = 3.83972e-4;
        let scan = CascadeConfig::single(ChannelStage::UniformScan { theta0 }).unwrap();
        let m = 1_000_000;
        let mut rng = realization_rng(4, 0);
        let samples: Vec<f64> = (0..m).map(|_| draw_stage_samples(&mut rng, &scan)[0].theta).collect();
        assert!(samples.iter().all(|t| t.abs() <= theta0 / 2.0));
        let mean = samples.iter().sum::<f64>() / m as f64;
        let var = samples.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!(mean.abs() < 4e-7, "mean {mean}");
        assert!((var / (theta0 * theta0 / 12.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn fast_path_matches_direct_propagation() {
        let run = McRunConfig::new(cfg(linspace(-8e-3, 8e-3, 21).unwrap()), CascadeConfig::hbt(), 1, 77);
        let pairs = sample_pair_fields(&run, 5).unwrap();
        let w = draw_emitter_weights(&mut realization_rng(77, 5), &run.source);
        let pos = run.source.positions(run.cfg.source_width);
        for (g, &dx) in run.cfg.dx_grid.iter().enumerate() {
            let e1 = propagate_field(&pos, &w, &run.cfg, dx / 2.0);
            let e2 = propagate_field(&pos, &w, &run.cfg, -dx / 2.0);
            let scale = e1.norm().max(1.0);
            assert!((pairs[g].0 - e1).norm() < 1e-10 * scale);
            assert!((pairs[g].1 - e2).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn zero_realizations_rejected() {
        let run = McRunConfig::new(cfg(vec![0.0]), CascadeConfig::hbt(), 0, 1);
        assert_eq!(run_simulation(&run), Err(SimError::NoRealizations));
        let bad = McRunConfig::new(cfg(vec![1.0, 0.0]), CascadeConfig::hbt(), 10, 1);
        assert!(matches!(run_simulation(&bad), Err(SimError::Config(_))));
    }

    #[test]
    fn single_realization_has_zero_error() {
        let run = McRunConfig::new(cfg(vec![0.0, 1e-3]), CascadeConfig::hbt(), 1, 1);
        let c = run_simulation(&run).unwrap();
        assert_eq!(c.g2[0], 1.0);
        assert_eq!(c.se, vec![0.0, 0.0]);
    }

    #[test]
    fn deterministic_and_worker_invariant() {
        let theta0 = angle_from_degrees(0.022).unwrap();
        let mut run = McRunConfig::new(cfg(linspace(-8e-3, 8e-3, 33).unwrap()), CascadeConfig::scanned(1, theta0).unwrap(), 3_000, 42);
        run.workers = 1;
        let a = run_simulation(&run).unwrap();
        assert_eq!(a, run_simulation(&run).unwrap());
        run.workers = 3;
        let b = run_simulation(&run).unwrap();
        assert_eq!(a.g2, b.g2);
        assert_eq!(a.se, b.se);
        run.workers = 64;
        assert_eq!(a.g2, run_simulation(&run).unwrap().g2);
        assert_eq!(a.meta.realizations, Some(3_000));
        assert_eq!(a.meta.seed, Some(42));
    }

    #[test]
    fn random_phase_source_loses_one_over_n() {
        // ⟨|Σ e^{iφ}|⁴⟩ = 2N² − N for unit phasors, so g2(0) = 2 − 1/N.
        let n = 16;
        let mut run = McRunConfig::new(cfg(vec![0.0]), CascadeConfig::hbt(), 200_000, 8);
        run.source = SourceModel { n_points: n, amplitude: 1.0, statistics: SourceStatistics::RandomPhase };
        let c = run_simulation(&run).unwrap();
        let expected = 2.0 - 1.0 / n as f64;
        assert!((c.g2[0] - expected).abs() < 4.0 * c.se[0], "{} vs {expected} (se {})", c.g2[0], c.se[0]);
    }

    #[test]
    fn single_precision_run() {
        let c32 = OpticalConfig { wavelength: 780e-9_f32, source_width: 356e-6, distance: 1.79, dx_grid: vec![0.0, 8e-3] };
        let run = McRunConfig::new(c32, CascadeConfig::hbt(), 20_000, 3);
        let c = run_simulation(&run).unwrap();
        assert!((c.g2[0] - 2.0).abs() < 4.0 * c.se[0] + 1e-3);
        assert!((c.g2[1] - 1.0).abs() < 4.0 * c.se[1] + 1e-3);
    }
}
