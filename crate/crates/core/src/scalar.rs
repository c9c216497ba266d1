//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All math is written against [`Scalar`], so a model can be instantiated
//! in `f32` or `f64`. Dataset parsing, reports and traces stay in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest norm used to guard divisions by vector norms.
    fn norm_guard() -> Self {
        Self::of(1e-12)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
