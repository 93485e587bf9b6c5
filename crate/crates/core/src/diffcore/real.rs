use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the engine can run on. Training uses `f32`; gradient checks
/// run the same code paths in `f64`.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    /// Little-endian 32-bit representation used by checkpoints.
    fn as_f32(self) -> f32;
    fn of_f32(v: f32) -> Self;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn of_f32(v: f32) -> Self {
        v as f64
    }
}

/// Sum in 64-bit regardless of the storage type.
pub fn sum_f64<T: Real>(xs: &[T]) -> f64 {
    xs.iter().map(|v| v.f64()).sum()
}
