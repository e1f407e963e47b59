use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type accepted by the numeric core: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}
