//! Numerical laboratory for the damped wave equation
//! `u_tt − Δ_M u + a(x) g(u_t) = 0` on closed triangulated surfaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: validated surfaces, cotangent/lumped-mass operators,
//!   tangential gradient and divergence, graph geodesics;
//! * [`linalg`]: conjugate gradients, power iteration, Lanczos and
//!   generalized eigenpairs of `(stiffness, mass)`;
//! * [`multiplier`]: normal charts, the local multiplier, discrete
//!   Hessians, the θ₁ form and the certified region `V`;
//! * [`damping`]: feedback laws, the cut-off profile and damping fields;
//! * [`solver`]: implicit-midpoint time stepping with energy audits;
//! * [`envelope`]: the `h → r → p → q` rate chain and decay envelopes;
//! * [`harness`]: identity residuals, the main inequality, Poincaré and
//!   observability checks;
//! * [`fit`]: exponential and polynomial decay fits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod damping;
pub mod echo;
pub mod envelope;
pub mod fit;
pub mod harness;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod multiplier;
pub mod solver;

#[cfg(test)]
pub(crate) mod testing;

pub use echo::ConfigEcho;
pub use error::{Error, Result};
pub use mesh::{ScalarField, SurfaceMesh, TangentField, Vec3, VertexSet};
