//! Floating-point abstraction for the numeric core.
//!
//! All geometry, weighting, correction, loss, and solver code is generic over
//! [`Scalar`] so the same routines run in `f32` or `f64`. The shipped tooling
//! (CLI, acceptance suite) instantiates `f64`; the documented tolerances
//! assume it.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type of the numeric core: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used when ingesting data or constants.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion to `f64`, used when emitting data.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
