//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar usable throughout the crate.
///
/// Implemented for `f32` and `f64`. Decompositions come from nalgebra, so the
/// bound is [`RealField`]; conversions to and from `f64` are used for
/// configuration values and reporting.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts a configuration or literal value.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal converts to scalar")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Unit roundoff of the type.
    fn eps() -> Self {
        Self::default_epsilon()
    }

    /// Smallest normal value representable in every implementing type.
    fn tiny() -> Self {
        Self::of(f32::MIN_POSITIVE as f64)
    }

    /// A relative tolerance that is `base` for double precision and is
    /// widened to what the type can actually resolve otherwise.
    fn tol(base: f64) -> Self {
        Self::of(base.max(1.0e3 * Self::eps().as_f64()))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Power ratio in decibels with unit reference.
pub fn db(power: f64) -> f64 {
    10.0 * power.log10()
}
