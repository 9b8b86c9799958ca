//! Floating-point abstraction: the numeric core is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type used throughout the solvers and the state-evolution engine.
///
/// `f64` is the default everywhere (file formats and the wire protocol are
/// fixed to 64-bit IEEE-754); `f32` is supported for experimentation.
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Display + Debug + Send + Sync + 'static
{
    /// Conversion from an `f64` constant. Panics only for exotic scalar types
    /// that cannot represent finite `f64` values, which `f32`/`f64` can.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 must convert")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_roundtrip() {
        assert_eq!(f64::of(1.5), 1.5);
        assert_eq!(f32::of(1.5), 1.5f32);
        assert_eq!(1.25f32.as_f64(), 1.25);
    }
}
