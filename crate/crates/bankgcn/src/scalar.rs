use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type accepted by the numeric kernels.
///
/// `f32` and `f64` both qualify. The stated tolerances, the training
/// pipeline, and the checkpoint format all assume `f64`; see the aliases at
/// the crate root.
pub trait Scalar: NdFloat + FromPrimitive {}

impl<T> Scalar for T where T: NdFloat + FromPrimitive {}

/// Conversion shorthand for numeric constants.
pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant must be representable in the scalar type")
}
