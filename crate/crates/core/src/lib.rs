//! Reconstruction of conductivity inclusions in the unit square from
//! boundary data.
//!
//! The pipeline generates Neumann-to-Dirichlet data with P1 finite elements
//! on crossed grids, locates the inclusion globally with linearized
//! monotonicity tests and monotonicity-constrained regularization, and
//! refines the resulting shape by level-set descent on the Kohn–Vogelius
//! misfit, optionally recovering the inclusion conductivity as well.

// Guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod grid_fem;

pub use error::{Error, Result};
pub use exec::Exec;
pub mod kv_levelset;
pub mod matops;
pub mod monotonicity;
pub mod ntd;
pub mod pipeline;
