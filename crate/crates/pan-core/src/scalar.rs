//! Element type abstraction: f32 for training runs, f64 for gradient checks.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use num_traits::Float;

/// Floating-point element of every tensor in this crate.
pub trait Scalar:
    Float + num_traits::NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shorthand for converting literals into the active scalar type.
#[inline]
pub fn fl<T: Scalar>(x: f64) -> T {
    T::from_f64(x)
}
