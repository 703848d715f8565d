//! Weighted nonlinear least squares for the closed-form g2 family.
//!
//! The fitted function is
//!
//! ```text
//! offset · [1 + β_env·sinc²(kRΔx/2z)] · ∏ⱼ [1 + ½·β_ch,j·fⱼ(Δx)]
//! ```
//!
//! where fⱼ is cos(kθⱼΔx) for a fixed stage and sinc(kθ0ⱼΔx/2) for a scanned
//! one. With every β = 1 and offset = 1 this is the ideal model; β < 1 absorbs
//! contrast lost to experimental imperfections.
//!
//! The solver is Levenberg–Marquardt with Marquardt's diagonal scaling, a
//! central-difference Jacobian and projection of each trial step back into the
//! parameter bounds.

use thiserror::Error;

use crate::analytic::{envelope, peak_and_background, stage_modulation, AnalyticError, AnalyticModel, ModelKind};
use crate::model::{linspace, CascadeConfig, ChannelStage, CurveMeta, G2Curve, OpticalConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` listed twice")]
    DuplicateParam(String),
    #[error("no free parameters")]
    NoFreeParams,
    #[error("underdetermined: {free} free parameters but only {points} data points")]
    Underdetermined { free: usize, points: usize },
    #[error("parameter `{name}` = {value} is outside its bounds")]
    OutOfBounds { name: String, value: f64 },
    #[error("weighted fit needs positive standard errors (index {0} has se = 0)")]
    ZeroUncertainty(usize),
    #[error("data grid has {got} points but model expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("singular normal equations: parameter `{0}` has no influence on the residuals")]
    Singular(String),
    #[error("fit did not converge after {} iterations (rss = {}, damping = {damping:e})", .result.iterations, .result.rss)]
    NotConverged { result: Box<FitResult<f64>>, damping: f64 },
    #[error(transparent)]
    Model(#[from] AnalyticError),
}

/// A parameter of the fitted function. Stage indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    SourceWidth,
    StageAngle(usize),
    BetaEnv,
    BetaCh(usize),
    Offset,
}

/// How residuals are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// (g2 − model)/se; needs se > 0 everywhere.
    StandardError,
    Unweighted,
}

impl Weighting {
    /// Weighted when every point carries a positive standard error.
    pub fn auto<T: Scalar>(data: &G2Curve<T>) -> Self {
        if !data.is_empty() && data.se.iter().all(|s| *s > T::zero()) {
            Weighting::StandardError
        } else {
            Weighting::Unweighted
        }
    }
}

/// The model family with a full parameter vector and the subset left free.
#[derive(Debug, Clone, PartialEq)]
pub struct FitModel<T> {
    pub kind: ModelKind,
    /// Wavelength and distance are always fixed; `source_width` is mirrored by `R`.
    pub cfg: OpticalConfig<T>,
    /// Stage modes; angles are mirrored by the `theta`/`theta0` parameters.
    pub stages: CascadeConfig<T>,
    values: Vec<T>,
    free: Vec<ParamId>,
}

impl<T: Scalar> FitModel<T> {
    /// Starts from the analytic model's geometry with β = 1, offset = 1 and
    /// nothing free.
    pub fn from_analytic(model: &AnalyticModel<T>) -> Self {
        let n = model.stages.len();
        let mut values = Vec::with_capacity(3 + 2 * n);
        values.push(model.cfg.source_width);
        values.extend(model.stages.stages.iter().map(ChannelStage::angle));
        values.push(T::one());
        values.extend(std::iter::repeat_n(T::one(), n));
        values.push(T::one());
        Self { kind: model.kind, cfg: model.cfg.clone(), stages: model.stages.clone(), values, free: Vec::new() }
    }

    fn n_stages(&self) -> usize {
        self.stages.len()
    }

    fn index(&self, id: ParamId) -> usize {
        let n = self.n_stages();
        match id {
            ParamId::SourceWidth => 0,
            ParamId::StageAngle(j) => 1 + j,
            ParamId::BetaEnv => 1 + n,
            ParamId::BetaCh(j) => 2 + n + j,
            ParamId::Offset => 2 + 2 * n,
        }
    }

    /// Every parameter of this model in vector order.
    pub fn params(&self) -> Vec<ParamId> {
        let n = self.n_stages();
        let mut ids = vec![ParamId::SourceWidth];
        ids.extend((0..n).map(ParamId::StageAngle));
        ids.push(ParamId::BetaEnv);
        ids.extend((0..n).map(ParamId::BetaCh));
        ids.push(ParamId::Offset);
        ids
    }

    /// `R`, `theta`/`theta0`, `beta_env`, `beta_ch`, `offset`; stages after the
    /// first carry a `_2`, `_3`, … suffix.
    pub fn name(&self, id: ParamId) -> String {
        let suffix = |j: usize| if j == 0 { String::new() } else { format!("_{}", j + 1) };
        match id {
            ParamId::SourceWidth => "R".to_owned(),
            ParamId::StageAngle(j) => {
                let base = if self.stages.stages[j].is_scan() { "theta0" } else { "theta" };
                format!("{base}{}", suffix(j))
            }
            ParamId::BetaEnv => "beta_env".to_owned(),
            ParamId::BetaCh(j) => format!("beta_ch{}", suffix(j)),
            ParamId::Offset => "offset".to_owned(),
        }
    }

    pub fn lookup(&self, name: &str) -> Result<ParamId, FitError> {
        self.params().into_iter().find(|&id| self.name(id) == name).ok_or_else(|| FitError::UnknownParam(name.to_owned()))
    }

    pub fn get(&self, id: ParamId) -> T {
        self.values[self.index(id)]
    }

    pub fn set(&mut self, name: &str, value: T) -> Result<(), FitError> {
        let id = self.lookup(name)?;
        let i = self.index(id);
        self.values[i] = value;
        Ok(())
    }

    pub fn with(mut self, name: &str, value: T) -> Result<Self, FitError> {
        self.set(name, value)?;
        Ok(self)
    }

    /// Marks the named parameters free (replacing any previous choice).
    pub fn with_free(mut self, names: &[&str]) -> Result<Self, FitError> {
        let mut free = Vec::with_capacity(names.len());
        for name in names {
            let id = self.lookup(name)?;
            if free.contains(&id) {
                return Err(FitError::DuplicateParam((*name).to_owned()));
            }
            free.push(id);
        }
        self.free = free;
        Ok(self)
    }

    pub fn free(&self) -> &[ParamId] {
        &self.free
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn free_values(&self) -> Vec<T> {
        self.free.iter().map(|&id| self.get(id)).collect()
    }

    fn with_free_values(&self, free_values: &[T]) -> Vec<T> {
        let mut v = self.values.clone();
        for (&id, &x) in self.free.iter().zip(free_values) {
            v[self.index(id)] = x;
        }
        v
    }

    fn set_free_values(&mut self, free_values: &[T]) {
        self.values = self.with_free_values(free_values);
    }

    /// Bounds: R > 0, θ0 > 0, β ∈ [0, 1], offset > 0, fixed θ finite.
    pub fn check_bounds(&self, values: &[T]) -> Result<(), FitError> {
        for id in self.params() {
            let v = values[self.index(id)];
            let ok = v.is_finite()
                && match id {
                    ParamId::SourceWidth | ParamId::Offset => v > T::zero(),
                    ParamId::StageAngle(j) => !self.stages.stages[j].is_scan() || v > T::zero(),
                    ParamId::BetaEnv | ParamId::BetaCh(_) => v >= T::zero() && v <= T::one(),
                };
            if !ok {
                return Err(FitError::OutOfBounds { name: self.name(id), value: v.to_f64_lossy() });
            }
        }
        Ok(())
    }

    fn eval_with(&self, values: &[T], dx: T) -> T {
        let n = self.n_stages();
        let cfg = OpticalConfig { source_width: values[0], ..self.cfg_without_grid() };
        let k = cfg.wavenumber();
        let half = T::lit(0.5);
        let mut g = values[2 + 2 * n] * (T::one() + values[1 + n] * envelope(&cfg, dx));
        for (j, stage) in self.stages.stages.iter().enumerate() {
            let stage = stage.with_angle(values[1 + j]);
            g *= T::one() + half * values[2 + n + j] * stage_modulation(&stage, k, dx);
        }
        g
    }

    fn cfg_without_grid(&self) -> OpticalConfig<T> {
        OpticalConfig {
            wavelength: self.cfg.wavelength,
            source_width: self.cfg.source_width,
            distance: self.cfg.distance,
            dx_grid: Vec::new(),
        }
    }

    /// Model value at the current parameters.
    pub fn value(&self, dx: T) -> T {
        self.eval_with(&self.values, dx)
    }

    /// Closed-form model with the current R and angles (β and offset dropped).
    pub fn to_analytic(&self, dx_grid: Vec<T>) -> Result<AnalyticModel<T>, AnalyticError> {
        let n = self.n_stages();
        let stages = CascadeConfig { stages: (0..n).map(|j| self.stages.stages[j].with_angle(self.values[1 + j])).collect() };
        let cfg = OpticalConfig { source_width: self.values[0], dx_grid, ..self.cfg_without_grid() };
        AnalyticModel::new(self.kind, cfg, stages)
    }

    /// Widths over which the modelled curve decays: λz/R and λ/θ0 per scanned stage.
    fn decay_widths(&self) -> Vec<T> {
        let n = self.n_stages();
        let mut w = vec![self.cfg.wavelength * self.cfg.distance / self.values[0]];
        for j in 0..n {
            if self.stages.stages[j].is_scan() {
                w.push(self.cfg.wavelength / self.values[1 + j]);
            }
        }
        w
    }

    fn typical_scale(&self, id: ParamId) -> T {
        let v = self.get(id).abs();
        if v > T::zero() {
            return v;
        }
        match id {
            ParamId::SourceWidth | ParamId::StageAngle(_) => T::lit(1e-4),
            _ => T::one(),
        }
    }

    fn project(&self, id: ParamId, old: T, new: T) -> T {
        let positive = |v: T| if v > T::zero() && v.is_finite() { v } else { old / T::lit(10.0) };
        match id {
            ParamId::SourceWidth | ParamId::Offset => positive(new),
            ParamId::StageAngle(j) if self.stages.stages[j].is_scan() => positive(new),
            ParamId::StageAngle(_) => new,
            ParamId::BetaEnv | ParamId::BetaCh(_) => new.max(T::zero()).min(T::one()),
        }
    }
}

fn raw_residuals<T: Scalar>(model: &FitModel<T>, values: &[T], data: &G2Curve<T>, weighting: Weighting) -> Vec<T> {
    data.dx
        .iter()
        .zip(&data.g2)
        .zip(&data.se)
        .map(|((&dx, &g), &se)| {
            let r = g - model.eval_with(values, dx);
            match weighting {
                Weighting::StandardError => r / se,
                Weighting::Unweighted => r,
            }
        })
        .collect()
}

fn check_weights<T: Scalar>(data: &G2Curve<T>, weighting: Weighting) -> Result<(), FitError> {
    if weighting == Weighting::StandardError {
        if let Some(i) = data.se.iter().position(|s| !(*s > T::zero())) {
            return Err(FitError::ZeroUncertainty(i));
        }
    }
    Ok(())
}

/// rᵢ = g2ᵢ − model(Δxᵢ), divided by seᵢ when weighted. `values` is the full
/// parameter vector (see [`FitModel::params`]).
pub fn residuals<T: Scalar>(model: &FitModel<T>, values: &[T], data: &G2Curve<T>, weighting: Weighting) -> Result<Vec<T>, FitError> {
    if values.len() != model.values.len() {
        return Err(FitError::LengthMismatch { expected: model.values.len(), got: values.len() });
    }
    model.check_bounds(values)?;
    check_weights(data, weighting)?;
    Ok(raw_residuals(model, values, data, weighting))
}

fn sum_sq<T: Scalar>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |a, v| a + *v * *v)
}

/// Central-difference Jacobian ∂rᵢ/∂pⱼ of the residuals with respect to the
/// free parameters, one column per parameter. Step: `step_scale`·max(|pⱼ|, typical scale).
pub fn jacobian<T: Scalar>(model: &FitModel<T>, free_values: &[T], data: &G2Curve<T>, weighting: Weighting, step_scale: T) -> Vec<Vec<T>> {
    model
        .free
        .iter()
        .enumerate()
        .map(|(j, &id)| {
            let h = step_scale * free_values[j].abs().max(model.typical_scale(id));
            let mut plus = free_values.to_vec();
            let mut minus = free_values.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let rp = raw_residuals(model, &model.with_free_values(&plus), data, weighting);
            let rm = raw_residuals(model, &model.with_free_values(&minus), data, weighting);
            let denom = (plus[j] - minus[j]).max(T::min_positive_value());
            rp.iter().zip(&rm).map(|(a, b)| (*a - *b) / denom).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Relative parameter step fell below 1e-10.
    StepTolerance,
    /// Relative decrease of the residual sum of squares fell below 1e-12.
    RssTolerance,
    /// Residuals are exactly zero.
    ExactFit,
    /// No damped step decreases the objective any more.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub weighting: Weighting,
    /// Coordinate-wise grid pre-scan of each free parameter before descent.
    pub prescan: bool,
    pub max_iterations: usize,
}

impl FitOptions {
    pub fn for_data<T: Scalar>(data: &G2Curve<T>) -> Self {
        Self { weighting: Weighting::auto(data), prescan: true, max_iterations: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    /// The model at the fitted parameter values.
    pub model: FitModel<T>,
    pub names: Vec<String>,
    pub values: Vec<T>,
    pub stderr: Vec<T>,
    pub rss: T,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Objective after the start point and every accepted step.
    pub rss_trace: Vec<T>,
    pub weighting: Weighting,
    pub points: usize,
    pub peak_to_background: T,
    pub fwhm: Option<T>,
}

impl<T: Scalar> FitResult<T> {
    pub fn param(&self, name: &str) -> Option<T> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn stderr_of(&self, name: &str) -> Option<T> {
        self.names.iter().position(|n| n == name).map(|i| self.stderr[i])
    }

    fn to_f64(&self) -> FitResult<f64> {
        let c = |v: T| v.to_f64_lossy();
        let cfg = &self.model.cfg;
        let model = FitModel {
            kind: self.model.kind,
            cfg: OpticalConfig {
                wavelength: c(cfg.wavelength),
                source_width: c(cfg.source_width),
                distance: c(cfg.distance),
                dx_grid: cfg.dx_grid.iter().map(|v| c(*v)).collect(),
            },
            stages: CascadeConfig {
                stages: self
                    .model
                    .stages
                    .stages
                    .iter()
                    .map(|s| match *s {
                        ChannelStage::FixedAngle { theta } => ChannelStage::FixedAngle { theta: c(theta) },
                        ChannelStage::UniformScan { theta0 } => ChannelStage::UniformScan { theta0: c(theta0) },
                    })
                    .collect(),
            },
            values: self.model.values.iter().map(|v| c(*v)).collect(),
            free: self.model.free.clone(),
        };
        FitResult {
            model,
            names: self.names.clone(),
            values: self.values.iter().map(|v| c(*v)).collect(),
            stderr: self.stderr.iter().map(|v| c(*v)).collect(),
            rss: c(self.rss),
            iterations: self.iterations,
            converged: self.converged,
            stop: self.stop,
            rss_trace: self.rss_trace.iter().map(|v| c(*v)).collect(),
            weighting: self.weighting,
            points: self.points,
            peak_to_background: c(self.peak_to_background),
            fwhm: self.fwhm.map(c),
        }
    }
}

fn log_points<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * T::from_usize(i) / T::from_usize(n - 1)).exp()).collect()
}

/// Coordinate-wise pre-scan: for each free parameter, 11 logarithmic points
/// within its bounds around the current value; keeps the lowest objective.
fn prescan<T: Scalar>(model: &mut FitModel<T>, data: &G2Curve<T>, weighting: Weighting) {
    let mut best = sum_sq(&raw_residuals(model, &model.values, data, weighting));
    for &id in &model.free.clone() {
        let i = model.index(id);
        let v = model.values[i];
        let candidates = match id {
            ParamId::BetaEnv | ParamId::BetaCh(_) => log_points(T::lit(0.05), T::one(), 11),
            ParamId::Offset => log_points(v / T::lit(2.0), v * T::lit(2.0), 11),
            _ if v == T::zero() => continue,
            _ => {
                let s = v.signum();
                log_points(v.abs() / T::lit(3.0), v.abs() * T::lit(3.0), 11).into_iter().map(|x| s * x).collect()
            }
        };
        for c in candidates {
            let mut trial = model.values.clone();
            trial[i] = c;
            let rss = sum_sq(&raw_residuals(model, &trial, data, weighting));
            if rss < best {
                best = rss;
                model.values = trial;
            }
        }
    }
}

fn gram<T: Scalar>(jac: &[Vec<T>], r: &[T]) -> (Vec<Vec<T>>, Vec<T>) {
    let m = jac.len();
    let mut a = vec![vec![T::zero(); m]; m];
    let mut g = vec![T::zero(); m];
    for i in 0..m {
        g[i] = jac[i].iter().zip(r).fold(T::zero(), |s, (x, y)| s + *x * *y);
        for j in 0..=i {
            let v = jac[i].iter().zip(&jac[j]).fold(T::zero(), |s, (x, y)| s + *x * *y);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    (a, g)
}

/// Lower-triangular Cholesky factor, or `None` if `a` is not positive definite.
fn cholesky<T: Scalar>(a: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    let n = a.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = (0..j).fold(a[i][j], |s, k| s - l[i][k] * l[j][k]);
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let n = l.len();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        y[i] = (0..i).fold(b[i], |s, k| s - l[i][k] * y[k]) / l[i][i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        x[i] = (i + 1..n).fold(y[i], |s, k| s - l[k][i] * x[k]) / l[i][i];
    }
    x
}

/// Fits the free parameters of `model` to `data`, starting from the model's
/// current values.
///
/// Converges when the relative step drops below 1e-10 or the relative rss
/// decrease below 1e-12; gives up after `max_iterations`.
pub fn fit<T: Scalar>(model: &FitModel<T>, data: &G2Curve<T>, options: &FitOptions) -> Result<FitResult<T>, FitError> {
    let m = model.free.len();
    if m == 0 {
        return Err(FitError::NoFreeParams);
    }
    if data.len() < m {
        return Err(FitError::Underdetermined { free: m, points: data.len() });
    }
    model.check_bounds(&model.values)?;
    check_weights(data, options.weighting)?;
    let weighting = options.weighting;

    let mut model = model.clone();
    if options.prescan {
        prescan(&mut model, data, weighting);
    }
    let step_tol = T::lit(1e-10);
    let rss_tol = T::lit(1e-12);
    let mut p = model.free_values();
    let mut r = raw_residuals(&model, &model.values, data, weighting);
    let mut rss = sum_sq(&r);
    let mut trace = vec![rss];
    let mut lambda = T::lit(1e-3);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < options.max_iterations {
        if rss == T::zero() {
            stop = StopReason::ExactFit;
            break;
        }
        iterations += 1;
        let jac = jacobian(&model, &p, data, weighting, T::lit(1e-6));
        let (a, g) = gram(&jac, &r);
        if let Some(j) = (0..m).find(|&j| !(a[j][j] > T::zero())) {
            return Err(FitError::Singular(model.name(model.free[j])));
        }
        loop {
            let mut damped = a.clone();
            for j in 0..m {
                damped[j][j] = a[j][j] * (T::one() + lambda);
            }
            let step = match cholesky(&damped) {
                Some(l) => cholesky_solve(&l, &g.iter().map(|v| -*v).collect::<Vec<_>>()),
                None => {
                    lambda *= T::lit(10.0);
                    if lambda > T::lit(1e16) {
                        stop = StopReason::Stalled;
                        break 'outer;
                    }
                    continue;
                }
            };
            let trial: Vec<T> = (0..m).map(|j| model.project(model.free[j], p[j], p[j] + step[j])).collect();
            let trial_values = model.with_free_values(&trial);
            let r_new = raw_residuals(&model, &trial_values, data, weighting);
            let rss_new = sum_sq(&r_new);
            if rss_new < rss {
                let rel_step =
                    (0..m).map(|j| (trial[j] - p[j]).abs() / p[j].abs().max(model.typical_scale(model.free[j]))).fold(T::zero(), T::max);
                let rel_rss = (rss - rss_new) / rss;
                p = trial;
                model.set_free_values(&p);
                r = r_new;
                rss = rss_new;
                trace.push(rss);
                lambda = (lambda / T::lit(10.0)).max(T::lit(1e-15));
                if rel_step < step_tol {
                    stop = StopReason::StepTolerance;
                    break 'outer;
                }
                if rel_rss < rss_tol {
                    stop = StopReason::RssTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= T::lit(10.0);
            if lambda > T::lit(1e16) {
                stop = StopReason::Stalled;
                break 'outer;
            }
        }
    }

    let names: Vec<String> = model.free.iter().map(|&id| model.name(id)).collect();
    let jac = jacobian(&model, &p, data, weighting, T::lit(1e-6));
    let (a, _) = gram(&jac, &r);
    let stderr = covariance_stderr(&a, rss, data.len(), m).ok_or_else(|| FitError::Singular(names.join(",")))?;
    let (peak_to_background, fwhm) = derived_metrics(&model)?;
    let result = FitResult {
        model,
        names,
        values: p,
        stderr,
        rss,
        iterations,
        converged: stop != StopReason::MaxIterations,
        stop,
        rss_trace: trace,
        weighting,
        points: data.len(),
        peak_to_background,
        fwhm,
    };
    if !result.converged {
        return Err(FitError::NotConverged { result: Box::new(result.to_f64()), damping: lambda.to_f64_lossy() });
    }
    Ok(result)
}

/// √diag((JᵀJ)⁻¹·rss/(N − m)).
fn covariance_stderr<T: Scalar>(a: &[Vec<T>], rss: T, n: usize, m: usize) -> Option<Vec<T>> {
    let l = cholesky(a)?;
    let s2 = if n > m { rss / T::from_usize(n - m) } else { T::zero() };
    Some(
        (0..m)
            .map(|j| {
                let mut e = vec![T::zero(); m];
                e[j] = T::one();
                (cholesky_solve(&l, &e)[j] * s2).max(T::zero()).sqrt()
            })
            .collect(),
    )
}

/// One-sided dense grid on which the fitted curve has decayed: 50 of the
/// longest decay widths, stretched so the tail window (last 10%) holds a whole
/// number of periods of the first fixed-angle stage.
fn dense_grid<T: Scalar>(model: &FitModel<T>) -> Vec<T> {
    let widest = model.decay_widths().into_iter().fold(T::zero(), T::max);
    let mut span = T::lit(50.0) * widest;
    let n = model.n_stages();
    if let Some(j) = (0..n).find(|&j| !model.stages.stages[j].is_scan() && model.values[1 + j] != T::zero()) {
        let period = (model.cfg.wavelength / model.values[1 + j]).abs();
        let tail = span / T::lit(10.0);
        span = T::lit(10.0) * period * (tail / period).ceil();
    }
    linspace(T::zero(), span, 20_001).expect("fixed point count")
}

/// Peak-to-background ratio and FWHM of the fitted curve, evaluated on a
/// grid long enough for the tail to be flat.
pub fn derived_metrics<T: Scalar>(model: &FitModel<T>) -> Result<(T, Option<T>), FitError> {
    let dx = dense_grid(model);
    let g2: Vec<T> = dx.iter().map(|&x| model.value(x)).collect();
    let curve = G2Curve { se: vec![T::zero(); dx.len()], dx, g2, meta: CurveMeta::named("fit") };
    let (peak, background) = peak_and_background(&curve)?;
    Ok((peak / background, fwhm(&curve)))
}

/// Full width at half maximum of the bunching peak around Δx = 0, with the
/// half level midway between peak and background and linear interpolation
/// between grid points. `None` when the curve never drops below that level.
pub fn fwhm<T: Scalar>(curve: &G2Curve<T>) -> Option<T> {
    let (peak, background) = peak_and_background(curve).ok()?;
    if !(peak > background) {
        return None;
    }
    let half = background + (peak - background) / T::lit(2.0);
    let start = curve.nearest_index(T::zero())?;
    let crossing = |i: usize, j: usize| {
        let (x0, x1, y0, y1) = (curve.dx[i], curve.dx[j], curve.g2[i], curve.g2[j]);
        x0 + (x1 - x0) * (y0 - half) / (y0 - y1)
    };
    let right = (start..curve.len().saturating_sub(1)).find(|&i| curve.g2[i] >= half && curve.g2[i + 1] < half).map(|i| crossing(i, i + 1));
    let side = right.or_else(|| (1..=start).rev().find(|&i| curve.g2[i] >= half && curve.g2[i - 1] < half).map(|i| crossing(i, i - 1)))?;
    Some(T::lit(2.0) * side.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow<T> {
    pub name: String,
    pub value: T,
    /// `None` for fixed parameters.
    pub stderr: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T> {
    pub model: ModelKind,
    /// Fitted function sampled on the data grid.
    pub fitted: G2Curve<T>,
    pub params: Vec<ParamRow<T>>,
    pub rss: T,
    pub reduced_chi2: T,
    pub iterations: usize,
    pub converged: bool,
    pub weighting: Weighting,
    pub peak_to_background: T,
    pub fwhm: Option<T>,
}

pub fn extract_report<T: Scalar>(result: &FitResult<T>, data: &G2Curve<T>) -> FitReport<T> {
    let model = &result.model;
    let g2: Vec<T> = data.dx.iter().map(|&x| model.value(x)).collect();
    let mut meta = CurveMeta::named(format!("fit-{}", model.kind.name()));
    let params = model
        .params()
        .into_iter()
        .map(|id| {
            let name = model.name(id);
            let value = model.get(id);
            meta.params.push((name.clone(), value.to_f64_lossy()));
            ParamRow { stderr: result.stderr_of(&name), name, value }
        })
        .collect();
    let fitted = G2Curve { dx: data.dx.clone(), se: vec![T::zero(); g2.len()], g2, meta };
    let dof = result.points.saturating_sub(result.values.len()).max(1);
    FitReport {
        model: model.kind,
        fitted,
        params,
        rss: result.rss,
        reduced_chi2: result.rss / T::from_usize(dof),
        iterations: result.iterations,
        converged: result.converged,
        weighting: result.weighting,
        peak_to_background: result.peak_to_background,
        fwhm: result.fwhm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::evaluate_curve;
    use crate::model::angle_from_degrees;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const R: f64 = 356e-6;

    fn cfg(grid: Vec<f64>) -> OpticalConfig<f64> {
        OpticalConfig { wavelength: 780e-9, source_width: R, distance: 1.79, dx_grid: grid }
    }

    fn grid() -> Vec<f64> {
        linspace(-8e-3, 8e-3, 161).unwrap()
    }

    fn theta0() -> f64 {
        angle_from_degrees(0.022).unwrap()
    }

    fn scanned_data(noise: f64, seed: u64) -> (AnalyticModel<f64>, G2Curve<f64>) {
        let model = AnalyticModel::scanned(cfg(grid()), theta0()).unwrap();
        let mut curve = evaluate_curve(&model).unwrap();
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, noise).unwrap();
            for g in &mut curve.g2 {
                *g += n.sample(&mut rng);
            }
            curve.se = vec![noise; curve.len()];
        }
        (model, curve)
    }

    #[test]
    fn parameter_names_and_lookup() {
        let stages =
            CascadeConfig::new(vec![ChannelStage::UniformScan { theta0: 1e-4 }, ChannelStage::FixedAngle { theta: 2e-4 }]).unwrap();
        let m = FitModel::from_analytic(&AnalyticModel::cascade(cfg(vec![0.0]), stages).unwrap());
        let names: Vec<String> = m.params().into_iter().map(|id| m.name(id)).collect();
        assert_eq!(names, ["R", "theta0", "theta_2", "beta_env", "beta_ch", "beta_ch_2", "offset"]);
        assert_eq!(m.get(m.lookup("theta_2").unwrap()), 2e-4);
        assert!(matches!(m.lookup("theta"), Err(FitError::UnknownParam(_))));
        assert!(matches!(m.clone().with_free(&["R", "R"]), Err(FitError::DuplicateParam(_))));
        let hbt = FitModel::from_analytic(&AnalyticModel::hbt(cfg(vec![0.0])).unwrap());
        assert_eq!(hbt.params().len(), 3);
    }

    #[test]
    fn exact_data_has_zero_residuals() {
        let (model, data) = scanned_data(0.0, 0);
        let fm = FitModel::from_analytic(&model);
        let r = residuals(&fm, fm.values(), &data, Weighting::Unweighted).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn perturbed_point_gives_one_residual() {
        let (model, mut data) = scanned_data(0.0, 0);
        data.se = vec![0.02; data.len()];
        data.g2[40] += 3.0 * 0.02;
        let fm = FitModel::from_analytic(&model);
        let r = residuals(&fm, fm.values(), &data, Weighting::StandardError).unwrap();
        assert!((r[40] - 3.0).abs() < 1e-9);
        assert_eq!(r.iter().filter(|v| v.abs() > 1e-9).count(), 1);
    }

    #[test]
    fn residuals_check_bounds_and_weights() {
        let (model, data) = scanned_data(0.0, 0);
        let fm = FitModel::from_analytic(&model);
        let mut v = fm.values().to_vec();
        v[0] = -1.0;
        assert!(matches!(residuals(&fm, &v, &data, Weighting::Unweighted), Err(FitError::OutOfBounds { .. })));
        let bad = fm.clone().with("beta_env", 1.2).unwrap();
        assert!(matches!(residuals(&bad, bad.values(), &data, Weighting::Unweighted), Err(FitError::OutOfBounds { .. })));
        assert_eq!(residuals(&fm, fm.values(), &data, Weighting::StandardError), Err(FitError::ZeroUncertainty(0)));
    }

    #[test]
    fn rss_minimum_at_true_width_on_grid_scan() {
        let data = evaluate_curve(&AnalyticModel::hbt(cfg(grid())).unwrap()).unwrap();
        let fm = FitModel::from_analytic(&AnalyticModel::hbt(cfg(grid())).unwrap());
        let rss_at = |r: f64| {
            let m = fm.clone().with("R", r).unwrap();
            sum_sq(&residuals(&m, m.values(), &data, Weighting::Unweighted).unwrap())
        };
        let best = (0..100)
            .map(|i| R * (0.5 + 1.5 * i as f64 / 99.0))
            .chain(std::iter::once(R))
            .min_by(|a, b| rss_at(*a).partial_cmp(&rss_at(*b)).unwrap())
            .unwrap();
        assert_eq!(best, R);
    }

    #[test]
    fn recovers_noiseless_scanned_parameters() {
        let (model, data) = scanned_data(0.0, 0);
        let init = FitModel::from_analytic(&model)
            .with("R", 1.2 * R)
            .unwrap()
            .with("theta0", 0.8 * theta0())
            .unwrap()
            .with_free(&["R", "theta0"])
            .unwrap();
        let res = fit(&init, &data, &FitOptions::for_data(&data)).unwrap();
        assert!(res.converged);
        assert!((res.param("R").unwrap() / R - 1.0).abs() < 1e-3);
        assert!((res.param("theta0").unwrap() / theta0() - 1.0).abs() < 1e-3);
        assert!((res.peak_to_background - 3.0).abs() < 0.01);
    }

    #[test]
    fn rss_never_increases() {
        let (model, data) = scanned_data(0.02, 5);
        let init = FitModel::from_analytic(&model)
            .with("R", 0.7 * R)
            .unwrap()
            .with_free(&["R", "theta0", "beta_env", "offset"])
            .unwrap()
            .with("beta_env", 0.5)
            .unwrap();
        let opts = FitOptions { prescan: false, ..FitOptions::for_data(&data) };
        let res = fit(&init, &data, &opts).unwrap();
        assert!(res.rss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.rss_trace.len() > 2);
        assert!(res.stderr.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn recovers_contrast_factors() {
        let (model, _) = scanned_data(0.0, 0);
        let truth = FitModel::from_analytic(&model).with("beta_env", 0.7).unwrap().with("beta_ch", 0.8).unwrap();
        let data = G2Curve::new(grid(), grid().iter().map(|&x| truth.value(x)).collect(), vec![0.0; 161], CurveMeta::default()).unwrap();
        let init = FitModel::from_analytic(&model).with_free(&["R", "theta0", "beta_env", "beta_ch"]).unwrap();
        let res = fit(&init, &data, &FitOptions::for_data(&data)).unwrap();
        assert!((res.param("beta_env").unwrap() - 0.7).abs() < 0.035);
        assert!((res.param("beta_ch").unwrap() - 0.8).abs() < 0.04);
        assert!((res.peak_to_background - 2.38).abs() < 0.01);
    }

    #[test]
    fn jacobian_is_step_stable_at_optimum() {
        let (model, data) = scanned_data(0.02, 9);
        let init = FitModel::from_analytic(&model).with_free(&["R", "theta0", "beta_ch"]).unwrap();
        let init = init.with("beta_ch", 0.9).unwrap();
        let res = fit(&init, &data, &FitOptions::for_data(&data)).unwrap();
        let p = res.model.free_values();
        let j1 = jacobian(&res.model, &p, &data, res.weighting, 1e-6);
        let j2 = jacobian(&res.model, &p, &data, res.weighting, 5e-7);
        for (c1, c2) in j1.iter().zip(&j2) {
            let scale = c1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (a, b) in c1.iter().zip(c2) {
                assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-3 * scale), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fit_errors() {
        let (model, data) = scanned_data(0.0, 0);
        let fm = FitModel::from_analytic(&model);
        assert_eq!(fit(&fm, &data, &FitOptions::for_data(&data)), Err(FitError::NoFreeParams));
        let few = G2Curve::new(vec![0.0], vec![3.0], vec![0.0], CurveMeta::default()).unwrap();
        let fm = fm.with_free(&["R", "theta0"]).unwrap();
        assert_eq!(fit(&fm, &few, &FitOptions::for_data(&few)), Err(FitError::Underdetermined { free: 2, points: 1 }));
        let opts = FitOptions { max_iterations: 1, prescan: false, weighting: Weighting::Unweighted };
        let off = fm.with("R", 2.0 * R).unwrap();
        assert!(matches!(fit(&off, &data, &opts), Err(FitError::NotConverged { .. })));
    }

    #[test]
    fn irrelevant_parameter_is_singular() {
        // With β_ch = 0 the channel angle has no effect.
        let (model, data) = scanned_data(0.0, 0);
        let fm = FitModel::from_analytic(&model).with("beta_ch", 0.0).unwrap().with_free(&["theta0"]).unwrap();
        let fm = fm.with("R", 1.1 * R).unwrap();
        assert!(matches!(fit(&fm, &data, &FitOptions::for_data(&data)), Err(FitError::Singular(_))));
    }

    #[test]
    fn hbt_fwhm_matches_half_power_point() {
        let model = AnalyticModel::hbt(cfg(vec![0.0])).unwrap();
        let fm = FitModel::from_analytic(&model);
        let (ratio, width) = derived_metrics(&fm).unwrap();
        assert!((ratio - 2.0).abs() < 1e-3);
        // sinc²(u) = 1/2 at u = 1.39156 → FWHM = 2·1.39156·λz/(πR) = 0.8859·λz/R.
        let expected = 0.8859 * 780e-9 * 1.79 / R;
        assert!((width.unwrap() / expected - 1.0).abs() < 1e-3, "{width:?} vs {expected}");
    }

    #[test]
    fn wide_scan_narrows_the_peak() {
        let base = cfg(vec![0.0]);
        let hbt = derived_metrics(&FitModel::from_analytic(&AnalyticModel::hbt(base.clone()).unwrap())).unwrap();
        // θ0 well above R/z ≈ 2e-4.
        let scanned = AnalyticModel::scanned(base, 2e-3).unwrap();
        let sc = derived_metrics(&FitModel::from_analytic(&scanned)).unwrap();
        assert!(sc.1.unwrap() < hbt.1.unwrap());
        assert!((sc.0 - 3.0).abs() < 0.01);
    }

    #[test]
    fn flat_data_ratio_is_one() {
        let model = AnalyticModel::hbt(cfg(vec![0.0])).unwrap();
        let flat = FitModel::from_analytic(&model).with("beta_env", 0.0).unwrap();
        let (ratio, width) = derived_metrics(&flat).unwrap();
        assert!((ratio - 1.0).abs() < 1e-12);
        assert_eq!(width, None);
    }

    #[test]
    fn fringe_model_ratio_uses_whole_periods() {
        let model = AnalyticModel::fringe(cfg(vec![0.0]), angle_from_degrees(0.007).unwrap()).unwrap();
        let (ratio, _) = derived_metrics(&FitModel::from_analytic(&model)).unwrap();
        assert!((ratio - 3.0).abs() < 5e-3, "{ratio}");
    }

    #[test]
    fn unit_rescaling_leaves_fit_unchanged() {
        let (model, data) = scanned_data(0.02, 21);
        let init = FitModel::from_analytic(&model).with("R", 1.1 * R).unwrap().with_free(&["R", "theta0"]).unwrap();
        let opts = FitOptions::for_data(&data);
        let meters = fit(&init, &data, &opts).unwrap();

        let s = 1e3;
        let mm_cfg = OpticalConfig {
            wavelength: 780e-9 * s,
            source_width: R * s,
            distance: 1.79 * s,
            dx_grid: grid().iter().map(|x| x * s).collect(),
        };
        let mm_model = AnalyticModel::scanned(mm_cfg, theta0()).unwrap();
        let mm_data = G2Curve { dx: data.dx.iter().map(|x| x * s).collect(), ..data.clone() };
        let mm_init = FitModel::from_analytic(&mm_model).with("R", 1.1 * R * s).unwrap().with_free(&["R", "theta0"]).unwrap();
        let mm = fit(&mm_init, &mm_data, &opts).unwrap();

        assert!((meters.rss - mm.rss).abs() <= 1e-8 * meters.rss);
        assert!((meters.peak_to_background - mm.peak_to_background).abs() <= 1e-8 * meters.peak_to_background);
        assert!((meters.param("R").unwrap() * s / mm.param("R").unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn report_lists_every_parameter() {
        let (model, data) = scanned_data(0.02, 2);
        let init = FitModel::from_analytic(&model).with_free(&["R"]).unwrap();
        let res = fit(&init, &data, &FitOptions::for_data(&data)).unwrap();
        let rep = extract_report(&res, &data);
        assert_eq!(rep.params.len(), 5);
        assert!(rep.params[0].stderr.is_some());
        assert!(rep.params[1].stderr.is_none());
        assert_eq!(rep.fitted.len(), data.len());
        assert!(rep.reduced_chi2 > 0.5 && rep.reduced_chi2 < 1.5);
    }

    #[test]
    fn single_precision_fit() {
        let c = OpticalConfig { wavelength: 780e-9_f32, source_width: 356e-6, distance: 1.79, dx_grid: linspace(-8e-3, 8e-3, 81).unwrap() };
        let model = AnalyticModel::hbt(c).unwrap();
        let data = evaluate_curve(&model).unwrap();
        let init = FitModel::from_analytic(&model).with("R", 300e-6).unwrap().with_free(&["R"]).unwrap();
        let res = fit(&init, &data, &FitOptions::for_data(&data)).unwrap();
        assert!((res.param("R").unwrap() / 356e-6 - 1.0).abs() < 1e-3);
    }
}
