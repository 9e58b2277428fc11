//! Identification of a space-time source term `f(x, t)` in a parabolic
//! equation with Robin boundary conditions from noisy boundary observations.
//!
//! The forward problem
//!
//! ```text
//!   u_t - div(A grad u) + b u = f     in  Omega x (0, T]
//!   A grad u . n + sigma u    = g     on  dOmega x (0, T]
//!   u(., 0)                   = q     in  Omega
//! ```
//!
//! is discretized with P1 finite elements in space and Crank-Nicolson in
//! time. The source is recovered by minimizing the Tikhonov functional
//!
//! ```text
//!   J(f) = sum_n int_{t^{n-1}}^{t^n} |U^n(f) - z|^2_{L2(Gamma)} dt + rho |f - f*|^2_{L2(Omega_T)}
//! ```
//!
//! with conjugate gradients, using the discrete adjoint for the gradient and
//! an exact quadratic line search.
//!
//! Module map:
//!
//! * [`mesh`]: structured triangulations of rectangles, red refinement,
//!   boundary tagging.
//! * [`assembly`]: P1 mass, operator and boundary matrices, loads,
//!   interpolation and time-slab averaging.
//! * [`pde`]: the shared Crank-Nicolson kernel and the forward,
//!   sensitivity, adjoint and source-condition solvers.
//! * [`inverse`]: cost, gradient, step size and the CG driver.
//! * [`experiments`]: the benchmark scenarios, noise synthesis, error
//!   norms and EOC tables.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod experiments;
pub mod inverse;
pub mod mesh;
pub mod pde;
mod sparse;

pub use error::{Error, Result};
pub use sparse::SparseSymMatrix;
