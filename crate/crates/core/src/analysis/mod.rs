//! Verification tooling: manufactured solutions, refinement studies and
//! dense spectral stability probes.

pub mod convergence;
pub mod manufactured;
pub mod stability;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use convergence::{
    convergence_study, least_squares_slope, running_slopes, semidiscrete_residual, ConvergenceLevel, ConvergenceReport,
    ErrorMeasure, Reference, Refinement, SemidiscreteReference, SlopeBand, StudySpec, TimeStep,
};
pub use manufactured::{make_manufactured, CaseId, ManufacturedCase};
pub use stability::{stability_probe, StabilityCertificate, PROBE_MAX_UNKNOWNS};

pub use crate::solvers::DENSE_MAX_UNKNOWNS;

/// Dense matrix of a linear map, one column per unit vector.
pub(crate) fn dense_from_map(dim: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<DMatrix<f64>> {
    if dim > DENSE_MAX_UNKNOWNS {
        return Err(Error::AssemblyTooLarge {
            unknowns: dim,
            limit: DENSE_MAX_UNKNOWNS,
        });
    }
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    for j in 0..dim {
        e[j] = 1.0;
        let col = f(&e)?;
        e[j] = 0.0;
        if col.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: col.len() });
        }
        for (i, v) in col.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}
