//! Compiler, bit-serial inference engine and accelerator model for
//! binarized CNNs with 1-bit weights and 2-bit activations.

pub mod accel;
pub mod bench;
pub mod codegen;
pub mod engine;
pub mod fixture;
pub mod layout;
pub mod model_ir;
pub mod scalar;
pub mod transform;

pub use num_rational::BigRational;
pub use scalar::Scalar;

pub type AffineFoldF32 = transform::AffineFold<f32>;
pub type AffineFoldF64 = transform::AffineFold<f64>;
/// Exact rational fold, used to cross-check the float paths.
pub type ExactAffineFold = transform::AffineFold<BigRational>;
