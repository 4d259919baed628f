//! Difference schemes for two-dimensional parabolic equations with mixed
//! derivatives, written in flux variables.
//!
//! The unknown is either the scalar `u` on the interior nodes of a uniform
//! rectangular grid, or the four-component flux `g = K D u` living on the
//! half-grids of forward and backward differences. The crate provides the
//! discrete operators (`D`, `D*`, `K`, `C = K^{-1}`, `A = D* K D`, `R = D D*`),
//! the two-level weighted schemes in both formulations, two locally
//! one-dimensional flux schemes, and the tooling used to verify them:
//! manufactured solutions, convergence studies and dense stability probes.

pub mod analysis;
pub mod coeff;
pub mod error;
pub mod field;
pub mod grid;
pub mod operators;
pub mod schemes;
pub mod solvers;
pub mod sparse;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use coeff::CoeffField;
pub use error::{Error, Result};
pub use field::{flux_inner_product, operator_weighted_norm, scalar_inner_product, FluxField, ScalarField};
pub use grid::{Comp, Grid2D, IndexRange};
pub use operators::KOperator;
pub use schemes::{LinearSolver, SchemeConfig, SchemeKind, SourceTime};
