//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the solvers and the unfolded network are generic over.
///
/// Implemented for `f32` and `f64`. Random draws are always made in `f64`
/// and narrowed, so an `f32` problem is the rounded image of the `f64` one
/// drawn from the same stream.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Little-endian bytes of the value, used for content hashing.
    fn le_bytes(self) -> Vec<u8>;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}
