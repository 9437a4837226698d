//! Scalar abstraction for the numeric core.
//!
//! All math in this crate is written against [`Real`] so the same code runs at
//! `f32` and `f64`. The experiment pipeline and every documented tolerance use
//! `f64`; `f32` exists for callers that want cheap storage and can accept the
//! precision loss.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable by every module in this crate.
///
/// Blanket-implemented for anything that looks like IEEE float (in practice:
/// `f32` and `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum<Self> + Display + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`, rounding if needed.
    ///
    /// Used for constants and configuration values flowing into generic code;
    /// the conversion from `f64` is total for IEEE targets, so this never
    /// panics in practice.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must convert into a Real scalar")
    }

    /// Converts into `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real scalar must convert into f64")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + Sum<T>
        + Display
        + Debug
        + Default
        + Send
        + Sync
        + 'static
{
}
