//! Numerical laboratory for minimal-mass blow-up of the mass-critical
//! nonlinear Schrödinger equation with a potential and an inhomogeneous
//! nonlinearity,
//!
//! `i u_t + Δu + g(x)|u|^{4/N} u - V(x) u = 0`.
//!
//! Everything is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`); the aliases at the crate root fix `f64`.

pub(crate) mod dense;
pub mod error;
pub mod evolve;
pub mod experiment;
pub mod coeffs;
pub mod field;
pub mod grid;
pub mod linops;
pub mod modulation;
pub mod profiles;
pub mod scalar;

pub use error::{Error, Result};
pub use field::{ComplexField, Norms};
pub use grid::{Geometry, SpatialGrid};
pub use num_complex::Complex;
pub use scalar::Real;

pub type Grid = SpatialGrid<f64>;
pub type Field = ComplexField<f64>;
