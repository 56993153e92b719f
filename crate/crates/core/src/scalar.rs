//! Scalar abstraction shared by the estimation and testing code.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable throughout the panel, factor, CD and CCE code.
///
/// Only `nalgebra`'s `ComplexField`/`RealField` methods are used for arithmetic
/// (`sqrt`, `abs`, `ln`, ...), which keeps method resolution unambiguous.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Lossy conversion from `f64` constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
