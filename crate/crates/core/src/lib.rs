//! Decomposes fixed-viewpoint, varying-illumination image sequences into a
//! time-constant reflectance and per-frame shading by minimizing a densely
//! connected energy over the whole sequence.
//!
//! The pieces fit together as follows:
//!
//! * [`imagestack`] loads a sequence and produces the log-domain stack
//!   (log frames, luminance weights, bilateral features, image pyramid)
//!   that every loss term consumes.
//! * [`apwls`] provides the all-pairs weighted least squares identity and
//!   the two sequence losses built on it (image reconstruction and
//!   reflectance consistency), each with analytic gradients.
//! * [`bilateral`] builds the splat/blur/slice factorization of the
//!   Gaussian pixel affinity over the whole sequence and evaluates the
//!   dense spatio-temporal reflectance smoothness loss.
//! * [`shadsmooth`] computes median-derivative edge weights and evaluates
//!   the multi-scale shading smoothness loss.
//! * [`energy`] assembles the four terms, exposes value + gradient, and
//!   defines the gauge-fixing convention.
//! * [`solver`] minimizes the total energy for one sequence.
//! * [`evalkit`] implements the WHDR, SAW, and MIT benchmark metrics.
//! * [`rawfloat`] is the bit-exact float interchange format used by the
//!   CLI and tests.
//!
//! Pixel storage is generic over the scalar type (`f32` or `f64`); all
//! loss accumulators run in `f64` regardless, so the documented tolerances
//! hold for either storage type.

pub mod apwls;
pub mod bilateral;
pub mod energy;
pub mod error;
pub mod evalkit;
pub mod image;
pub mod imagestack;
pub mod rawfloat;
pub mod scalar;
pub mod shadsmooth;
pub mod solver;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision image plane.
pub type ImageF32 = image::Image<f32>;
/// Double-precision image plane.
pub type ImageF64 = image::Image<f64>;
/// Sequence with single-precision pixel storage.
pub type ImageSequenceF32 = imagestack::ImageSequence<f32>;
/// Sequence with double-precision pixel storage (the solver default).
pub type ImageSequenceF64 = imagestack::ImageSequence<f64>;
/// Log-domain stack with double-precision storage.
pub type LogStackF64 = imagestack::LogStack<f64>;
/// Decomposition with double-precision storage (the solver default).
pub type DecompositionF64 = energy::Decomposition<f64>;
