use core::fmt::{Debug, Display};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Element type of every tensor. Training and tests default to `f64`;
/// `f32` is selectable through run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).unwrap()
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap()
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
}

/// Shorthand for converting literals inside generic numeric code.
pub fn s<S: Scalar>(x: f64) -> S {
    S::of_f64(x)
}
