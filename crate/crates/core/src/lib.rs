//! Two-level overlapping Schwarz solvers on space-filling-curve partitions.
//!
//! The grid points of an anisotropic tensor grid on `[0,1]^d` are ordered by a
//! Hilbert curve, the ordered sequence is cut into `P` equally sized pieces, and
//! each piece is enlarged along the curve to obtain overlapping subdomains. An
//! algebraic piecewise-constant coarse space over the disjoint pieces supplies
//! the second level. Nothing in the construction depends on the dimension.
//!
//! Module map:
//!
//! - [`sfc`]: Hilbert encode/decode with 128-bit keys.
//! - [`grid`]: level vectors, finite-difference Laplacian, manufactured problems.
//! - [`sparse`]: CSR matrices and Cholesky factorizations.
//! - [`partition`]: balanced disjoint split, overlap enlargement, weights.
//! - [`coarse`]: restriction `R0`, Galerkin matrix `A0`, deflation operators.
//! - [`schwarz`]: one-level, additive, deflated and balanced preconditioners.
//! - [`krylov`]: damped Richardson, PCG, flexible CG, eigenvalue estimates.
//! - [`combine`]: sparse-grid combination technique driver.
//! - [`harness`]: experiment drivers behind the `sfcdd` binary.

pub mod coarse;
pub mod combine;
mod error;
pub mod grid;
pub mod harness;
pub mod krylov;
pub mod partition;
pub mod schwarz;
pub mod sfc;
pub mod sparse;

pub use error::{Error, Result};
