//! Refinement studies against manufactured solutions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dense_from_map;
use super::manufactured::ManufacturedCase;
use crate::error::{Error, Result};
use crate::field::{FluxField, ScalarField};
use crate::grid::Grid2D;
use crate::operators::{apply_d, KOperator};
use crate::schemes::{run_evolution_with, SchemeConfig, State};

/// How the time step follows the mesh in a spatial study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    Fixed(f64),
    /// `τ = factor · h²`
    ScaledH2(f64),
}

impl TimeStep {
    pub fn tau(self, h: f64) -> f64 {
        match self {
            TimeStep::Fixed(tau) => tau,
            TimeStep::ScaledH2(c) => c * h * h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Square meshes with `N` cells per direction.
    Space { cells: Vec<usize>, time_step: TimeStep },
    /// Fixed `N × N` mesh, decreasing time steps.
    Time { cells: usize, taus: Vec<f64> },
}

/// What the discrete solution is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Nodal restriction of the closed-form solution.
    #[default]
    Exact,
    /// Exact solution of the spatially discrete problem on the same mesh,
    /// isolating the time discretization error.
    Semidiscrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMeasure {
    /// `max_n ‖yⁿ − u(tⁿ)‖`
    #[default]
    Scalar,
    /// `max_n ‖gⁿ − g(tⁿ)‖`
    Flux,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeBand {
    pub min: f64,
    #[serde(default = "infinite")]
    pub max: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl SlopeBand {
    pub fn at_least(min: f64) -> Self {
        Self { min, max: f64::INFINITY }
    }

    pub fn between(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, slope: f64) -> bool {
        slope >= self.min && slope <= self.max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    /// Scheme and horizon; `tau` is overridden per level.
    pub scheme: SchemeConfig,
    pub chi: f64,
    pub refinement: Refinement,
    pub reference: Reference,
    pub measure: ErrorMeasure,
    pub band: SlopeBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub error: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<ConvergenceLevel>,
    /// Refinement parameter per level: `h` in space, `τ` in time.
    pub parameter: Vec<f64>,
    /// Least-squares slope over the first `k + 1` levels.
    pub running_slope: Vec<Option<f64>>,
    pub slope: Option<f64>,
    pub band: SlopeBand,
    pub pass: bool,
}

/// Slope of `log e` against `log x` by least squares. `None` with fewer than
/// two usable points.
pub fn least_squares_slope(x: &[f64], e: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(e)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

pub fn running_slopes(x: &[f64], e: &[f64]) -> Vec<Option<f64>> {
    (0..x.len()).map(|k| least_squares_slope(&x[..=k], &e[..=k])).collect()
}

/// `du/dt + A u − f` at the interior nodes for the exact solution.
pub fn semidiscrete_residual(case: &ManufacturedCase, k: &KOperator, t: f64) -> Result<ScalarField> {
    let grid = *k.grid();
    let u = case.exact(grid, t);
    let mut r = k.apply_a(&u)?;
    let rest = ScalarField::from_fn(grid, |x1, x2| case.du_dt(x1, x2, t) - case.source(x1, x2, t));
    r.axpy(1.0, &rest)?;
    Ok(r)
}

/// Exact solution of `dy/dt + A y = φ(t)`, `y(0) = u⁰`, with the separable
/// source `φ(t) = e^{−t} f(·, 0)` of the manufactured cases, by dense
/// eigendecomposition of `A`.
///
/// The matching flux solution of `C dg/dt + R g = Dφ`, `g(0) = K D u⁰`, is
/// `g(t) = K D y(t)`.
#[derive(Debug, Clone)]
pub struct SemidiscreteReference {
    grid: Grid2D,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    initial: DVector<f64>,
    source: DVector<f64>,
}

impl SemidiscreteReference {
    pub fn new(case: &ManufacturedCase, k: &KOperator) -> Result<Self> {
        let grid = *k.grid();
        let a = dense_from_map(grid.scalar_len(), |e| {
            Ok(k.apply_a(&ScalarField::from_values(grid, e.to_vec())?)?.into_values())
        })?;
        let a = 0.5 * (&a + a.transpose());
        let eig = SymmetricEigen::new(a);
        let v = eig.eigenvectors;
        let u0 = DVector::from_vec(case.initial(grid).into_values());
        let f0 = DVector::from_vec(ScalarField::from_fn(grid, |x1, x2| case.source(x1, x2, 0.0)).into_values());
        Ok(Self {
            grid,
            eigenvalues: eig.eigenvalues,
            initial: v.transpose() * u0,
            source: v.transpose() * f0,
            eigenvectors: v,
        })
    }

    pub fn scalar(&self, t: f64) -> ScalarField {
        let modal = DVector::from_iterator(
            self.eigenvalues.len(),
            self.eigenvalues.iter().enumerate().map(|(j, &lam)| {
                let d = lam - 1.0;
                // (e^{−t} − e^{−λt}) / (λ − 1)
                let forced = if (d * t).abs() < 1e-12 {
                    t * (-t).exp()
                } else {
                    -(-t).exp() * (-d * t).exp_m1() / d
                };
                (-lam * t).exp() * self.initial[j] + self.source[j] * forced
            }),
        );
        let y = &self.eigenvectors * modal;
        ScalarField::from_values(self.grid, y.as_slice().to_vec()).expect("dimension")
    }

    pub fn flux(&self, k: &KOperator, t: f64) -> Result<FluxField> {
        k.apply_k(&apply_d(&self.scalar(t)))
    }
}

enum Target<'a> {
    Exact(&'a ManufacturedCase),
    Semi(SemidiscreteReference),
}

fn level_error(case: &ManufacturedCase, spec: &StudySpec, level: usize, n: usize, tau: f64) -> Result<ConvergenceLevel> {
    let grid = Grid2D::new(case.l1(), case.l2(), n, n)?;
    let k = KOperator::new(case.coeff_field(grid, spec.chi)?)?;
    let mut cfg = spec.scheme;
    cfg.tau = tau;
    cfg.monitor = false;
    cfg.validate()?;
    let target = match spec.reference {
        Reference::Exact => Target::Exact(case),
        Reference::Semidiscrete => Target::Semi(SemidiscreteReference::new(case, &k)?),
    };
    let measure = spec.measure;
    let mut worst: f64 = 0.0;
    let mut failure: Option<Error> = None;
    let mut observe = |_: usize, t: f64, state: &State| {
        if failure.is_some() {
            return;
        }
        let err = (|| -> Result<f64> {
            match measure {
                ErrorMeasure::Scalar => {
                    let y = state
                        .scalar()
                        .ok_or_else(|| Error::Config("scalar error requested for a flux-only scheme".into()))?;
                    let mut d = match &target {
                        Target::Exact(c) => c.exact(grid, t),
                        Target::Semi(s) => s.scalar(t),
                    };
                    d.axpy(-1.0, y)?;
                    Ok(d.norm())
                }
                ErrorMeasure::Flux => {
                    let g = match state.flux() {
                        Some(g) => g.clone(),
                        None => k.apply_k(&apply_d(state.scalar().expect("scalar state")))?,
                    };
                    let mut d = match &target {
                        Target::Exact(c) => c.exact_flux(&k, t)?,
                        Target::Semi(s) => s.flux(&k, t)?,
                    };
                    d.axpy(-1.0, &g)?;
                    Ok(d.norm())
                }
            }
        })();
        match err {
            Ok(e) => worst = worst.max(e),
            Err(e) => failure = Some(e),
        }
    };
    let initial = State::initial(cfg.kind, &case.initial(grid), &k)?;
    run_evolution_with(initial, case, &k, &cfg, &mut observe)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ConvergenceLevel {
        level,
        h: grid.h_max(),
        tau,
        error: worst,
        steps: cfg.n_steps(),
    })
}

/// Runs every level (in parallel), measures the max-over-time error and
/// fits the observed order.
pub fn convergence_study(case: &ManufacturedCase, spec: &StudySpec) -> Result<ConvergenceReport> {
    let plan: Vec<(usize, f64)> = match &spec.refinement {
        Refinement::Space { cells, time_step } => cells
            .iter()
            .map(|&n| (n, time_step.tau(case.l1().max(case.l2()) / n as f64)))
            .collect(),
        Refinement::Time { cells, taus } => taus.iter().map(|&tau| (*cells, tau)).collect(),
    };
    if plan.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two levels".into()));
    }
    let levels = plan
        .par_iter()
        .enumerate()
        .map(|(i, &(n, tau))| level_error(case, spec, i, n, tau))
        .collect::<Result<Vec<_>>>()?;
    let parameter: Vec<f64> = match spec.refinement {
        Refinement::Space { .. } => levels.iter().map(|l| l.h).collect(),
        Refinement::Time { .. } => levels.iter().map(|l| l.tau).collect(),
    };
    let errors: Vec<f64> = levels.iter().map(|l| l.error).collect();
    let running_slope = running_slopes(&parameter, &errors);
    let slope = least_squares_slope(&parameter, &errors);
    let pass = slope.is_some_and(|s| spec.band.contains(s));
    Ok(ConvergenceReport {
        levels,
        parameter,
        running_slope,
        slope,
        band: spec.band,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::make_manufactured;

    #[test]
    fn slope_of_exact_power_law() {
        let x = [0.1, 0.05, 0.025];
        let e: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((least_squares_slope(&x, &e).unwrap() - 2.0).abs() < 1e-12);
        let run = running_slopes(&x, &e);
        assert!(run[0].is_none() && (run[2].unwrap() - 2.0).abs() < 1e-12);
        assert!(least_squares_slope(&x[..1], &e[..1]).is_none());
    }

    #[test]
    fn residual_is_second_order() {
        for id in ["a", "b"] {
            let case = make_manufactured(id).unwrap();
            let mut errs = Vec::new();
            let mut hs = Vec::new();
            for n in [16, 32, 64, 128] {
                let grid = Grid2D::unit_square(n).unwrap();
                let k = KOperator::new(case.coeff_field(grid, 0.5).unwrap()).unwrap();
                errs.push(semidiscrete_residual(&case, &k, 0.2).unwrap().max_abs());
                hs.push(1.0 / n as f64);
            }
            let s = least_squares_slope(&hs, &errs).unwrap();
            assert!(s >= 1.8, "{id}: {s} {errs:?}");
        }
    }

    #[test]
    fn semidiscrete_reference_solves_the_ode() {
        let case = make_manufactured("b").unwrap();
        let grid = Grid2D::unit_square(6).unwrap();
        let k = KOperator::new(case.coeff_field(grid, 0.5).unwrap()).unwrap();
        let r = SemidiscreteReference::new(&case, &k).unwrap();
        assert!((r.scalar(0.0).values().iter().zip(case.initial(grid).values()))
            .all(|(a, b)| (a - b).abs() < 1e-12));
        // dy/dt + A y − φ by central differences in time
        let (t, dt) = (0.3, 1e-5);
        let dy: Vec<f64> = r
            .scalar(t + dt)
            .values()
            .iter()
            .zip(r.scalar(t - dt).values())
            .map(|(a, b)| (a - b) / (2.0 * dt))
            .collect();
        let ay = k.apply_a(&r.scalar(t)).unwrap();
        let phi = ScalarField::from_fn(grid, |x1, x2| case.source(x1, x2, t));
        for ((d, a), p) in dy.iter().zip(ay.values()).zip(phi.values()) {
            assert!((d + a - p).abs() < 1e-6 * p.abs().max(1.0));
        }
    }
}
