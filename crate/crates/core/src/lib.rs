//! Local discontinuous Galerkin solver for singularly perturbed
//! convection-diffusion problems on layer-adapted tensor meshes.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod assembly;
pub mod error;
pub mod frontal;
pub mod mesh;
pub mod norms;
pub mod problem;
pub mod projection;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod study;

pub use error::{Error, Result};
