//! Desk-scale numerical machinery for the space-homogeneous elastic
//! Boltzmann equation with variable hard potentials and angular cutoff.
//!
//! The crate provides:
//!
//! * singular-weight Gauss–Jacobi and Gaussian velocity quadrature
//!   ([`quadrature`]),
//! * collision kernels `|u|^alpha h(cos theta)` with an admissibility-checked
//!   catalog of angular cross sections ([`kernel`]),
//! * a manufactured family of polynomial-times-Gaussian densities closed
//!   under differentiation, with absolute-moment and tail diagnostics
//!   ([`density`]),
//! * weak-form collision functionals, spherical averages `A[phi]`, pointwise
//!   gain evaluation and the loss convolution ([`collision`]),
//! * sharp angular gain constants `gamma_p`, their asymptotics and the
//!   Povzner inequality checker ([`povzner`]),
//! * normalized-moment table algebra, geometric bound fitting and tail-order
//!   estimation ([`moments`]),
//! * the differential-inequality hierarchy for derivative moments together
//!   with ODE comparison bounds and the geometric bound-propagation pipeline
//!   ([`hierarchy`]),
//! * a Nanbu–Babovsky stochastic particle solver for empirical cross-checks
//!   ([`dsmc`]).
//!
//! All value types are immutable after construction and safe to share across
//! threads; operations are pure functions of their inputs.

pub mod collision;
pub mod density;
pub mod dsmc;
pub mod error;
pub mod hierarchy;
pub mod kernel;
pub mod moments;
pub mod povzner;
pub mod quadrature;
pub mod special;
pub mod vec3;

pub use error::CoreError;

/// Crate version, embedded into CLI artifacts for traceability.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
