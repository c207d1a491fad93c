//! Lagrangian dynamics with independent kinematic and variational
//! constraints, possibly of higher order.
//!
//! A system is the triple (Lagrangian, kinematic constraint, variational
//! constraint). The kinematic constraint restricts the motion; the
//! variational constraint restricts virtual displacements and so fixes which
//! constraint forces are admissible. The classical D'Alembert and Chetaev
//! principles are recovered as special constructors.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod assembler;
pub mod diff;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod jet;
pub mod models;
pub mod registry;
pub mod reduction;
pub mod scalar;
pub mod scenario;
pub mod system;
pub mod verify;

pub use diff::{Dual64, HyperDual64};
pub use dual::Dual;
pub use error::{Error, Result};
pub use jet::JetPoint;
pub use scalar::Scalar;

/// Jet with `f64` entries.
pub type Jet = JetPoint<f64>;
/// Jet with `f32` entries.
pub type Jet32 = JetPoint<f32>;
