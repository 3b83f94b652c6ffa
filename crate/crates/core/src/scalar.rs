use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar used by the numeric core.
///
/// All core math (tensors, the autodiff tape, the physics kernels) is generic
/// over this trait, with implementations provided for `f32` and `f64`. The
/// crate-root aliases pin the artifact itself to `f64`: the PDE residual
/// stencils and the finite-difference gradient checks need the full 64-bit
/// mantissa.
pub trait Scalar:
    'static
    + Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::fmt::LowerExp
{
    /// Convert an `f64` constant to the scalar type.
    fn cast(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Round-trip through `f64`, used where a scalar has to leave the generic
    /// core (logging, CSV output).
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}
