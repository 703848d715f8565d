//! Streaming intensity-correlation accumulator with batch-means errors, and a
//! z-score comparator between curves.

use thiserror::Error;

use crate::model::{ConfigError, CurveMeta, G2Curve};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelatorError {
    #[error("intensity must be finite and non-negative (grid index {index})")]
    BadIntensity { index: usize },
    #[error("expected {expected} intensities per realization, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("accumulator is empty")]
    Empty,
    #[error("grid mismatch")]
    GridMismatch,
    #[error("zero standard error with nonzero deviation at grid index {0}")]
    ZeroError(usize),
    #[error("mean intensity is zero at grid index {0}")]
    ZeroIntensity(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Sums over one batch of realizations.
#[derive(Debug, Clone, PartialEq)]
struct BatchSums<T> {
    count: u64,
    sum1: Vec<T>,
    sum2: Vec<T>,
    sum12: Vec<T>,
}

impl<T: Scalar> BatchSums<T> {
    fn new(grid_len: usize) -> Self {
        Self { count: 0, sum1: vec![T::zero(); grid_len], sum2: vec![T::zero(); grid_len], sum12: vec![T::zero(); grid_len] }
    }

    fn g2(&self, i: usize) -> T {
        T::lit(self.count as f64) * self.sum12[i] / (self.sum1[i] * self.sum2[i])
    }
}

/// Running sums ΣI1, ΣI2, ΣI1I2 per grid point, kept in batches of
/// `batch_len` realizations for the error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrAccumulator<T> {
    grid_len: usize,
    batch_len: u64,
    batches: Vec<BatchSums<T>>,
}

/// Number of batches used for M realizations: min(100, M/10), at least 1.
pub fn batch_count(realizations: u64) -> u64 {
    (realizations / 10).clamp(1, 100)
}

/// Batch length ⌈M/B⌉ that splits M realizations into `batch_count(M)` batches.
pub fn batch_len_for(realizations: u64) -> u64 {
    realizations.max(1).div_ceil(batch_count(realizations))
}

impl<T: Scalar> CorrAccumulator<T> {
    pub fn new(grid_len: usize, batch_len: u64) -> Self {
        Self { grid_len, batch_len: batch_len.max(1), batches: Vec::new() }
    }

    /// Accumulator sized for a run of `realizations`, using the default batching.
    pub fn for_run(grid_len: usize, realizations: u64) -> Self {
        Self::new(grid_len, batch_len_for(realizations))
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn batch_len(&self) -> u64 {
        self.batch_len
    }

    pub fn count(&self) -> u64 {
        self.batches.iter().map(|b| b.count).sum()
    }

    pub fn batches(&self) -> usize {
        self.batches.len()
    }

    /// Adds one realization: detector-1 and detector-2 intensities at every grid point.
    pub fn accumulate(&mut self, i1: &[T], i2: &[T]) -> Result<(), CorrelatorError> {
        for v in [i1, i2] {
            if v.len() != self.grid_len {
                return Err(CorrelatorError::WrongLength { expected: self.grid_len, got: v.len() });
            }
        }
        if let Some(index) = i1.iter().zip(i2).position(|(a, b)| !ok_intensity(*a) || !ok_intensity(*b)) {
            return Err(CorrelatorError::BadIntensity { index });
        }
        if self.batches.last().is_none_or(|b| b.count >= self.batch_len) {
            self.batches.push(BatchSums::new(self.grid_len));
        }
        let batch = self.batches.last_mut().expect("batch just ensured");
        for i in 0..self.grid_len {
            batch.sum1[i] += i1[i];
            batch.sum2[i] += i2[i];
            batch.sum12[i] += i1[i] * i2[i];
        }
        batch.count += 1;
        Ok(())
    }

    /// Concatenates batch records, `self` first.
    pub fn merge(mut self, other: Self) -> Result<Self, CorrelatorError> {
        if self.grid_len != other.grid_len {
            return Err(CorrelatorError::GridMismatch);
        }
        self.batches.extend(other.batches);
        Ok(self)
    }

    /// g2 = M·ΣI1I2 / (ΣI1·ΣI2) per point; se from the spread of per-batch g2
    /// (zero with fewer than two batches).
    pub fn finalize(&self, dx: &[T], meta: CurveMeta) -> Result<G2Curve<T>, CorrelatorError> {
        if dx.len() != self.grid_len {
            return Err(CorrelatorError::GridMismatch);
        }
        if self.batches.is_empty() {
            return Err(CorrelatorError::Empty);
        }
        let mut total = BatchSums::new(self.grid_len);
        for b in &self.batches {
            total.count += b.count;
            for i in 0..self.grid_len {
                total.sum1[i] += b.sum1[i];
                total.sum2[i] += b.sum2[i];
                total.sum12[i] += b.sum12[i];
            }
        }
        let nb = self.batches.len();
        let mut g2 = Vec::with_capacity(self.grid_len);
        let mut se = Vec::with_capacity(self.grid_len);
        for i in 0..self.grid_len {
            if total.sum1[i] == T::zero() || total.sum2[i] == T::zero() {
                return Err(CorrelatorError::ZeroIntensity(i));
            }
            g2.push(total.g2(i));
            se.push(if nb < 2 { T::zero() } else { batch_means_se(self.batches.iter().map(|b| b.g2(i)), nb) });
        }
        let meta = CurveMeta { realizations: Some(total.count), ..meta };
        Ok(G2Curve::new(dx.to_vec(), g2, se, meta)?)
    }
}

fn ok_intensity<T: Scalar>(v: T) -> bool {
    v.is_finite() && v >= T::zero()
}

fn batch_means_se<T: Scalar>(values: impl Iterator<Item = T> + Clone, nb: usize) -> T {
    let n = T::from_usize(nb);
    let mean = values.clone().fold(T::zero(), |a, v| a + v) / n;
    let ss = values.fold(T::zero(), |a, v| a + (v - mean) * (v - mean));
    let se = (ss / (n * (n - T::one()))).sqrt();
    if se.is_finite() {
        se
    } else {
        T::zero()
    }
}

/// Per-point agreement between two curves on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<T> {
    /// (a − b)/√(se_a² + se_b²); zero where both curves agree exactly.
    pub z: Vec<T>,
    pub max_abs_z: T,
    pub frac_above_2: T,
    pub rmse: T,
}

impl<T: Scalar> ComparisonReport<T> {
    /// True when some point deviates by more than four standard errors.
    pub fn flagged(&self) -> bool {
        self.max_abs_z > T::lit(4.0)
    }
}

pub fn compare_curves<T: Scalar>(mc: &G2Curve<T>, reference: &G2Curve<T>) -> Result<ComparisonReport<T>, CorrelatorError> {
    if mc.len() != reference.len() || mc.is_empty() {
        return Err(CorrelatorError::GridMismatch);
    }
    let scale = mc.dx.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::min_positive_value());
    let tol = T::lit(1e-9) * scale;
    if mc.dx.iter().zip(&reference.dx).any(|(a, b)| (*a - *b).abs() > tol) {
        return Err(CorrelatorError::GridMismatch);
    }
    let mut z = Vec::with_capacity(mc.len());
    let mut sq = T::zero();
    for i in 0..mc.len() {
        let dev = mc.g2[i] - reference.g2[i];
        sq += dev * dev;
        let se = (mc.se[i] * mc.se[i] + reference.se[i] * reference.se[i]).sqrt();
        if se == T::zero() {
            if dev != T::zero() {
                return Err(CorrelatorError::ZeroError(i));
            }
            z.push(T::zero());
        } else {
            z.push(dev / se);
        }
    }
    let n = T::from_usize(z.len());
    let max_abs_z = z.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let above = z.iter().filter(|v| v.abs() > T::lit(2.0)).count();
    Ok(ComparisonReport { max_abs_z, frac_above_2: T::from_usize(above) / n, rmse: (sq / n).sqrt(), z })
}
