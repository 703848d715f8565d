use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, NumAssignOps};

/// Floating-point type the models and estimators are generic over: `f32` or `f64`.
pub trait Scalar: Float + FloatConst + NumAssignOps + Default + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` literal. Infallible for the float types implementing this trait.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
