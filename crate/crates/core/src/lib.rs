//! Physics-guided transformer for sparse reconstruction of PDE-governed
//! fields, together with its training objective, baselines, and benchmark
//! suites.
//!
//! The numeric core — [`tensor`], [`tape`], and [`physics`] — is generic over
//! the scalar type via [`scalar::Scalar`] (implemented for `f32` and `f64`).
//! The artifact itself runs on the `f64` aliases below: residual stencils and
//! finite-difference gradient checks need 64-bit precision.

pub mod bench;
pub mod check;
pub mod error;
pub mod fd;
pub mod model;
pub mod physics;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{PgtError, Result};
pub use scalar::Scalar;

/// Scalar type of the artifact.
pub type Real = f64;
/// Dense array over [`Real`].
pub type Tensor = tensor::Tensor<Real>;
/// Autodiff tape over [`Real`].
pub type Tape = tape::Tape<Real>;
/// Token coordinate over [`Real`].
pub type Coord = physics::Coord<Real>;
/// PDE family over [`Real`].
pub type PdeFamily = physics::PdeFamily<Real>;
/// Attention bias over [`Real`].
pub type GammaBias = physics::gamma::GammaBias<Real>;
