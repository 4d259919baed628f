//! Dense spectral certification of one-step transition operators.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::dense_from_map;
use crate::error::{Error, Result};
use crate::field::{FluxField, ScalarField};
use crate::operators::{apply_d, KOperator};
use crate::schemes::{LinearSolver, SchemeConfig, SchemeKind, State, Stepper};

/// Largest transition operator the probe assembles.
pub const PROBE_MAX_UNKNOWNS: usize = super::DENSE_MAX_UNKNOWNS;
/// `‖T‖_B ≤ 1 + STABILITY_SLACK` counts as stable.
pub const STABILITY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub kind: SchemeKind,
    pub sigma: f64,
    pub tau: f64,
    pub dim: usize,
    /// The energy operator is positive definite.
    pub b_spd: bool,
    /// `‖T‖_B`, undefined when `B` is not positive definite.
    pub norm_t: Option<f64>,
    pub stable: bool,
}

/// Unit vectors are stepped with dense factorizations: iterative solver
/// noise would be amplified by the conditioning of the implicit operator.
fn probe_config(cfg: &SchemeConfig) -> SchemeConfig {
    SchemeConfig {
        solver: LinearSolver::Dense,
        ..*cfg
    }
}

/// Dense one-step operator with `f = 0`, column `j` being the step applied
/// to the `j`-th unit vector of the evolving unknown (`y` for the scalar
/// schemes, `g` for the flux schemes).
pub fn transition_matrix(cfg: &SchemeConfig, k: &KOperator) -> Result<DMatrix<f64>> {
    let cfg = probe_config(cfg);
    let stepper = Stepper::new(k, cfg)?;
    let grid = *k.grid();
    let zero = ScalarField::zeros(grid);
    if cfg.kind.evolves_flux() {
        dense_from_map(grid.flux_len(), |e| {
            let g = FluxField::from_values(grid, e.to_vec())?;
            let (next, _) = stepper.step(&State::Flux(g), &zero)?;
            Ok(next.flux().expect("flux state").data().to_vec())
        })
    } else {
        dense_from_map(grid.scalar_len(), |e| {
            let y = ScalarField::from_values(grid, e.to_vec())?;
            let state = match cfg.kind {
                SchemeKind::FluxSystem => State::System {
                    g: k.apply_k(&apply_d(&y))?,
                    y,
                },
                _ => State::Scalar(y),
            };
            let (next, _) = stepper.step(&state, &zero)?;
            Ok(next.scalar().expect("scalar state").values().to_vec())
        })
    }
}

/// Dense symmetric energy operator of the scheme's estimate: identity for
/// the scalar schemes (the grid norm up to the constant cell area), `C` or
/// the splitting forms for the flux schemes.
pub fn energy_matrix(cfg: &SchemeConfig, k: &KOperator) -> Result<DMatrix<f64>> {
    let grid = *k.grid();
    if !cfg.kind.evolves_flux() {
        return Ok(DMatrix::identity(grid.scalar_len(), grid.scalar_len()));
    }
    let stepper = Stepper::new(k, *cfg)?;
    let b = dense_from_map(grid.flux_len(), |e| {
        let g = FluxField::from_values(grid, e.to_vec())?;
        Ok(stepper.apply_energy(&g)?.expect("flux energy").into_values())
    })?;
    Ok(0.5 * (&b + b.transpose()))
}

/// `‖T‖_B = max_v ‖Tv‖_B / ‖v‖_B`, computed as the spectral norm of
/// `Lᵀ T L⁻ᵀ` with `B = L Lᵀ`.
pub fn stability_probe(cfg: &SchemeConfig, k: &KOperator) -> Result<StabilityCertificate> {
    cfg.validate()?;
    let grid = *k.grid();
    let dim = if cfg.kind.evolves_flux() { grid.flux_len() } else { grid.scalar_len() };
    if dim > PROBE_MAX_UNKNOWNS {
        return Err(Error::AssemblyTooLarge {
            unknowns: dim,
            limit: PROBE_MAX_UNKNOWNS,
        });
    }
    let mut cert = StabilityCertificate {
        kind: cfg.kind,
        sigma: cfg.sigma,
        tau: cfg.tau,
        dim,
        b_spd: false,
        norm_t: None,
        stable: false,
    };
    let b = energy_matrix(cfg, k)?;
    let eig = SymmetricEigen::new(b.clone());
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 1e-12 * max_eig) {
        return Ok(cert);
    }
    let Some(chol) = Cholesky::new(b) else {
        return Ok(cert);
    };
    cert.b_spd = true;
    let t = transition_matrix(cfg, k)?;
    let l = chol.l();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    let m = l.transpose() * t * l_inv.transpose();
    let norm = m.singular_values().max();
    cert.norm_t = Some(norm);
    cert.stable = norm <= 1.0 + STABILITY_SLACK;
    Ok(cert)
}
