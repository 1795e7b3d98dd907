//! Scalar abstraction over the pixel storage type.

use std::fmt::{Debug, Display};

/// Floating-point pixel type: `f32` or `f64`.
///
/// Loss accumulators always run in `f64`; this trait only governs storage,
/// so the conversion helpers are infallible.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn as_f64(self) -> f64;
    fn of_f64(x: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f64(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn of_f64(x: f64) -> Self {
        x
    }
}
