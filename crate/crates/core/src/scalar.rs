//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::LowerExp;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the solver can run on.
///
/// Everything in the crate is written against this bound; `f64` is the
/// production type and `f32` compiles and runs with correspondingly looser
/// accuracy.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + LowerExp {
    /// Machine epsilon of the type.
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + LowerExp {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts `T` back into `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
