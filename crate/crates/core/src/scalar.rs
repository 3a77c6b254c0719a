//! Floating-point scalar abstraction.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code runs in f64 (the default everywhere; verification tolerances assume
//! it) and f32 (opt-in, for timing runs). Concrete aliases live at the crate
//! root.

use std::fmt;

pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from f64; exact for f64, rounded for f32.
    fn of(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
