//! Two-level time-stepping schemes and the evolution driver.
//!
//! All schemes are advanced in increment form: given the state at `tⁿ`, a
//! linear system is solved for `δ = y^{n+1} − yⁿ` (or the flux analogue and
//! the new level is `yⁿ + δ`. A steady state therefore reproduces itself
//! exactly.
//!
//! | kind             | state  | implicit operator          | monitored norm |
//! |------------------|--------|----------------------------|----------------|
//! | `scalar_weighted`| `y`    | `E + στ A`                 | `‖y‖`          |
//! | `flux_system`    | `y, g` | `E + στ A`, then `g = KDy` | `‖y‖`          |
//! | `flux_weighted`  | `g`    | `C + στ R`                 | `‖g‖_C`        |
//! | `lod_diagonal`   | `g`    | `C + στ Q` (line solves)   | `‖g‖_B`, `B = C + στQ − τR/2` |
//! | `lod_triangular` | `g`    | `(C + στR1) C⁻¹ (C + στR2)`| `‖g‖_B`, `B = (C + στR1) C⁻¹ (C + στR2) − τR/2` |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dot, operator_weighted_norm, same_grid, FluxField, ScalarField};
use crate::grid::{Comp, Grid2D};
use crate::operators::{apply_d, apply_dstar, apply_q, apply_r, KOperator};
use crate::solvers::{
    relative_residual, solve_spd, solve_triangular_diag, solve_tridiagonal_batch, DenseSpd, FnOperator, LinearOperator,
    SolverReport, Tridiagonal, DEFAULT_CG_TOL,
};
use crate::sparse::{Triangle, TriangularSplit};

/// Relative slack allowed when checking a levelwise estimate.
pub const ESTIMATE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    ScalarWeighted,
    FluxSystem,
    FluxWeighted,
    LodDiagonal,
    LodTriangular,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::ScalarWeighted,
        SchemeKind::FluxSystem,
        SchemeKind::FluxWeighted,
        SchemeKind::LodDiagonal,
        SchemeKind::LodTriangular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::ScalarWeighted => "scalar_weighted",
            SchemeKind::FluxSystem => "flux_system",
            SchemeKind::FluxWeighted => "flux_weighted",
            SchemeKind::LodDiagonal => "lod_diagonal",
            SchemeKind::LodTriangular => "lod_triangular",
        }
    }

    /// Whether the evolving state is the flux alone.
    pub fn evolves_flux(self) -> bool {
        matches!(self, SchemeKind::FluxWeighted | SchemeKind::LodDiagonal | SchemeKind::LodTriangular)
    }

    pub fn is_lod(self) -> bool {
        matches!(self, SchemeKind::LodDiagonal | SchemeKind::LodTriangular)
    }
}

/// Time at which the source is sampled for the step `tⁿ → tⁿ⁺¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTime {
    /// `σ tⁿ⁺¹ + (1 − σ) tⁿ`
    #[default]
    Weighted,
    /// `tⁿ`
    Old,
    /// `tⁿ + τ/2`
    Midpoint,
}

/// Linear solver for the implicit operators that are not split into lines
/// or triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Matrix-free conjugate gradients.
    #[default]
    Cg,
    /// Dense Cholesky factorization, assembled once per stepper.
    Dense,
}

fn default_true() -> bool {
    true
}
fn default_cg_tol() -> f64 {
    DEFAULT_CG_TOL
}
fn default_cg_max_iter() -> usize {
    20_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub sigma: f64,
    pub tau: f64,
    pub t_final: f64,
    #[serde(default = "default_true")]
    pub monitor: bool,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default = "default_cg_max_iter")]
    pub cg_max_iter: usize,
    #[serde(default)]
    pub source_time: SourceTime,
    #[serde(default)]
    pub solver: LinearSolver,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, sigma: f64, tau: f64, t_final: f64) -> Result<Self> {
        let cfg = Self {
            kind,
            sigma,
            tau,
            t_final,
            monitor: true,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iter: default_cg_max_iter(),
            source_time: SourceTime::Weighted,
            solver: LinearSolver::Cg,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got tau = {}", self.tau)));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.tau * (1.0 - 1e-12)) {
            return Err(Error::Config(format!(
                "horizon must be at least one step, got T = {} with tau = {}",
                self.t_final, self.tau
            )));
        }
        if !self.sigma.is_finite() {
            return Err(Error::Config(format!("weight must be finite, got sigma = {}", self.sigma)));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iter == 0 {
            return Err(Error::Config("solver tolerance and iteration limit must be positive".into()));
        }
        Ok(())
    }

    /// `N = T / τ`, rounded to the nearest integer.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.tau).round() as usize).max(1)
    }

    pub fn source_time(&self, t_n: f64) -> f64 {
        match self.source_time {
            SourceTime::Weighted => t_n + self.sigma * self.tau,
            SourceTime::Old => t_n,
            SourceTime::Midpoint => t_n + 0.5 * self.tau,
        }
    }

    pub fn with_kind(mut self, kind: SchemeKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Right-hand side `f(x1, x2, t)` of the parabolic equation.
pub trait Source: Sync {
    fn value(&self, x1: f64, x2: f64, t: f64) -> f64;

    fn is_zero(&self) -> bool {
        false
    }
}

impl<F: Fn(f64, f64, f64) -> f64 + Sync> Source for F {
    fn value(&self, x1: f64, x2: f64, t: f64) -> f64 {
        self(x1, x2, t)
    }
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSource;

impl Source for NoSource {
    fn value(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }

    fn is_zero(&self) -> bool {
        true
    }
}

pub fn sample_source(grid: Grid2D, source: &dyn Source, t: f64) -> ScalarField {
    if source.is_zero() {
        return ScalarField::zeros(grid);
    }
    ScalarField::from_fn(grid, |x1, x2| source.value(x1, x2, t))
}

/// State carried from one time level to the next.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Scalar(ScalarField),
    System { y: ScalarField, g: FluxField },
    Flux(FluxField),
}

impl State {
    /// Initial level from `u⁰`: the scalar itself, or `g⁰ = K D u⁰`.
    pub fn initial(kind: SchemeKind, u0: &ScalarField, k: &KOperator) -> Result<Self> {
        Ok(match kind {
            SchemeKind::ScalarWeighted => State::Scalar(u0.clone()),
            SchemeKind::FluxSystem => State::System {
                y: u0.clone(),
                g: k.apply_k(&apply_d(u0))?,
            },
            _ => State::Flux(k.apply_k(&apply_d(u0))?),
        })
    }

    pub fn scalar(&self) -> Option<&ScalarField> {
        match self {
            State::Scalar(y) | State::System { y, .. } => Some(y),
            State::Flux(_) => None,
        }
    }

    pub fn flux(&self) -> Option<&FluxField> {
        match self {
            State::System { g, .. } | State::Flux(g) => Some(g),
            State::Scalar(_) => None,
        }
    }

    fn matches(&self, kind: SchemeKind) -> bool {
        matches!(
            (self, kind),
            (State::Scalar(_), SchemeKind::ScalarWeighted)
                | (State::System { .. }, SchemeKind::FluxSystem)
                | (State::Flux(_), SchemeKind::FluxWeighted | SchemeKind::LodDiagonal | SchemeKind::LodTriangular)
        )
    }
}

/// Outcome of a levelwise estimate check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Satisfied,
    Violated,
    /// The energy operator is not positive on the data; the norm is undefined.
    Undefined,
    NotMonitored,
}

impl EstimateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateStatus::Satisfied => "true",
            EstimateStatus::Violated => "false",
            EstimateStatus::Undefined => "undefined",
            EstimateStatus::NotMonitored => "",
        }
    }
}

/// Monitoring data for the step that produced level `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Index of the new time level.
    pub n: usize,
    pub t: f64,
    /// Monitored norm of level `n`.
    pub norm: Option<f64>,
    /// Monitored norm of level `n − 1`.
    pub prev_norm: Option<f64>,
    /// Norm of the source data used by the step (`‖φ‖`, `‖Dφ‖_K` or `‖Dφ‖_{B⁻¹}`).
    pub rhs_norm: Option<f64>,
    pub estimate: EstimateStatus,
    pub solver: SolverReport,
}

/// Levelwise check `new ≤ old + τ rhs` with relative slack.
pub fn check_estimate(new: Option<f64>, old: Option<f64>, rhs: Option<f64>, tau: f64) -> EstimateStatus {
    match (new, old, rhs) {
        (Some(new), Some(old), Some(rhs)) => {
            let bound = old + tau * rhs;
            if new <= bound * (1.0 + ESTIMATE_SLACK) {
                EstimateStatus::Satisfied
            } else {
                EstimateStatus::Violated
            }
        }
        _ => EstimateStatus::Undefined,
    }
}

/// Prepared operators for one scheme configuration on one coefficient field.
pub struct Stepper<'k> {
    k: &'k KOperator,
    cfg: SchemeConfig,
    c_diag: Option<Vec<f64>>,
    split: Option<TriangularSplit>,
    /// Global flux indices of every line of the `C + στQ` solve, with the
    /// mesh step along the line.
    lines: Vec<(Vec<usize>, f64)>,
    dense: Option<DenseSpd>,
}

impl<'k> Stepper<'k> {
    pub fn new(k: &'k KOperator, cfg: SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let c_diag = k.c_diagonal().ok();
        if cfg.kind.is_lod() && c_diag.is_none() {
            return Err(Error::MixedCoefficients(cfg.kind.name()));
        }
        let grid = *k.grid();
        let split = if cfg.kind == SchemeKind::LodTriangular {
            Some(TriangularSplit::assemble(&grid)?)
        } else {
            None
        };
        let lines = if c_diag.is_some() { line_layout(&grid) } else { Vec::new() };
        let mut stepper = Self {
            k,
            cfg,
            c_diag,
            split,
            lines,
            dense: None,
        };
        if cfg.solver == LinearSolver::Dense {
            stepper.dense = match cfg.kind {
                SchemeKind::ScalarWeighted | SchemeKind::FluxSystem => Some(DenseSpd::factor(&stepper.scalar_operator())?),
                SchemeKind::FluxWeighted => Some(DenseSpd::factor(&stepper.flux_operator())?),
                SchemeKind::LodDiagonal | SchemeKind::LodTriangular => None,
            };
        }
        Ok(stepper)
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn k(&self) -> &KOperator {
        self.k
    }

    fn grid(&self) -> Grid2D {
        *self.k.grid()
    }

    fn sigma_tau(&self) -> f64 {
        self.cfg.sigma * self.cfg.tau
    }

    fn solve_implicit(&self, op: &dyn LinearOperator, rhs: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        if let Some(dense) = &self.dense {
            let x = dense.solve(rhs);
            let report = SolverReport::direct(relative_residual(&op.apply(&x), rhs));
            return Ok((x, report));
        }
        let (x, report) = solve_spd(op, rhs, None, self.cfg.cg_tol, self.cfg.cg_max_iter);
        if report.converged {
            Ok((x, report))
        } else {
            Err(Error::NotConverged(report))
        }
    }

    /// `E + στA`
    fn scalar_operator(&self) -> impl LinearOperator + '_ {
        let grid = self.grid();
        let st = self.sigma_tau();
        FnOperator::new(grid.scalar_len(), move |x: &[f64]| {
            let y = ScalarField::from_values(grid, x.to_vec()).expect("dimension");
            let ay = self.k.apply_a(&y).expect("grid");
            x.iter().zip(ay.values()).map(|(xi, ai)| xi + st * ai).collect()
        })
    }

    /// `C + στR`
    fn flux_operator(&self) -> impl LinearOperator + '_ {
        let grid = self.grid();
        let st = self.sigma_tau();
        FnOperator::new(grid.flux_len(), move |x: &[f64]| {
            let v = FluxField::from_values(grid, x.to_vec()).expect("dimension");
            let cv = self.k.apply_c(&v).expect("grid");
            let rv = apply_r(&v);
            cv.data().iter().zip(rv.data()).map(|(c, r)| c + st * r).collect()
        })
    }

    /// Solves `(E + στA) δ = rhs`.
    fn solve_scalar_implicit(&self, rhs: &ScalarField) -> Result<(ScalarField, SolverReport)> {
        let (x, rep) = self.solve_implicit(&self.scalar_operator(), rhs.values())?;
        Ok((ScalarField::from_values(self.grid(), x)?, rep))
    }

    /// `(E + στA) δ = τ(φ − A yⁿ)`.
    pub fn step_scalar_weighted(&self, y: &ScalarField, phi: &ScalarField) -> Result<(ScalarField, SolverReport)> {
        same_grid(&self.grid(), y.grid())?;
        same_grid(y.grid(), phi.grid())?;
        let ay = self.k.apply_a(y)?;
        self.advance_scalar(y, phi, &ay)
    }

    fn advance_scalar(&self, y: &ScalarField, phi: &ScalarField, div_flux: &ScalarField) -> Result<(ScalarField, SolverReport)> {
        let tau = self.cfg.tau;
        let rhs: Vec<f64> = phi.values().iter().zip(div_flux.values()).map(|(p, a)| tau * (p - a)).collect();
        let rhs = ScalarField::from_values(*y.grid(), rhs)?;
        let (delta, rep) = self.solve_scalar_implicit(&rhs)?;
        let mut next = y.clone();
        next.axpy(1.0, &delta)?;
        Ok((next, rep))
    }

    /// Weighted scheme for the coupled pair: the `y` update uses `D* gⁿ`
    /// and the new flux is recovered as `g^{n+1} = K D y^{n+1}`.
    pub fn step_flux_system(&self, y: &ScalarField, g: &FluxField, phi: &ScalarField) -> Result<(ScalarField, FluxField, SolverReport)> {
        same_grid(&self.grid(), y.grid())?;
        same_grid(y.grid(), g.grid())?;
        same_grid(y.grid(), phi.grid())?;
        let div = apply_dstar(g);
        let (next, rep) = self.advance_scalar(y, phi, &div)?;
        let g_next = self.k.apply_k(&apply_d(&next))?;
        Ok((next, g_next, rep))
    }

    /// `τ (Dφ − R gⁿ)`, the common right-hand side of the flux schemes.
    fn flux_increment_rhs(&self, g: &FluxField, phi: &ScalarField) -> Result<Vec<f64>> {
        same_grid(&self.grid(), g.grid())?;
        same_grid(g.grid(), phi.grid())?;
        let tau = self.cfg.tau;
        let dphi = apply_d(phi);
        let rg = apply_r(g);
        Ok(dphi.data().iter().zip(rg.data()).map(|(d, r)| tau * (d - r)).collect())
    }

    /// `(C + στ DD*) δ = τ (Dφ − DD* gⁿ)`, by conjugate gradients.
    pub fn step_flux_weighted(&self, g: &FluxField, phi: &ScalarField) -> Result<(FluxField, SolverReport)> {
        let rhs = self.flux_increment_rhs(g, phi)?;
        let grid = self.grid();
        let (delta, rep) = self.solve_implicit(&self.flux_operator(), &rhs)?;
        let mut next = g.clone();
        next.axpy(1.0, &FluxField::from_values(grid, delta)?)?;
        Ok((next, rep))
    }

    fn require_c_diag(&self) -> Result<&[f64]> {
        self.c_diag.as_deref().ok_or(Error::MixedCoefficients(self.cfg.kind.name()))
    }

    /// `(C + στQ) δ = τ (Dφ − R gⁿ)`: only the diagonal blocks of `R` are
    /// implicit, so the solve splits into independent tridiagonal lines.
    pub fn step_lod_diagonal(&self, g: &FluxField, phi: &ScalarField) -> Result<(FluxField, SolverReport)> {
        let c = self.require_c_diag()?;
        let rhs = self.flux_increment_rhs(g, phi)?;
        let st = self.sigma_tau();
        let systems: Vec<(Tridiagonal, Vec<f64>)> = self
            .lines
            .iter()
            .map(|(idx, h)| {
                let n = idx.len();
                let off = -st / (h * h);
                let diag = idx
                    .iter()
                    .enumerate()
                    .map(|(j, &gi)| {
                        let weight = if j == 0 || j + 1 == n { 1.0 } else { 2.0 };
                        c[gi] + st * weight / (h * h)
                    })
                    .collect();
                let m = Tridiagonal {
                    sub: vec![off; n - 1],
                    diag,
                    sup: vec![off; n - 1],
                };
                (m, idx.iter().map(|&gi| rhs[gi]).collect())
            })
            .collect();
        let solutions = solve_tridiagonal_batch(&systems)?;
        let grid = self.grid();
        let mut delta = vec![0.0; grid.flux_len()];
        for ((idx, _), sol) in self.lines.iter().zip(solutions) {
            for (&gi, v) in idx.iter().zip(sol) {
                delta[gi] = v;
            }
        }
        let delta = FluxField::from_values(grid, delta)?;
        let applied = self.apply_c_plus_q(&delta, c, st);
        let report = SolverReport::direct(relative_residual(&applied, &rhs));
        let mut next = g.clone();
        next.axpy(1.0, &delta)?;
        Ok((next, report))
    }

    fn apply_c_plus_q(&self, v: &FluxField, c: &[f64], st: f64) -> Vec<f64> {
        let qv = apply_q(v);
        v.data().iter().zip(c).zip(qv.data()).map(|((x, ci), q)| ci * x + st * q).collect()
    }

    fn require_split(&self) -> Result<&TriangularSplit> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::Config("stepper was not prepared for lod_triangular".into()))
    }

    /// `(C + στR1) C⁻¹ (C + στR2) δ = τ (Dφ − R gⁿ)` by a forward
    /// substitution, a diagonal multiply by `C` and a backward substitution.
    pub fn step_lod_triangular(&self, g: &FluxField, phi: &ScalarField) -> Result<(FluxField, SolverReport)> {
        let c = self.require_c_diag()?;
        let split = self.require_split()?;
        let rhs = self.flux_increment_rhs(g, phi)?;
        let st = self.sigma_tau();
        let z1 = solve_triangular_diag(split, Triangle::Lower, c, st, &rhs)?;
        let z2: Vec<f64> = z1.iter().zip(c).map(|(z, ci)| z * ci).collect();
        let delta = solve_triangular_diag(split, Triangle::Upper, c, st, &z2)?;
        let report = SolverReport::direct(relative_residual(&self.apply_factored(&delta, c, split, st), &rhs));
        let mut next = g.clone();
        next.axpy(1.0, &FluxField::from_values(self.grid(), delta)?)?;
        Ok((next, report))
    }

    /// `(C + στR1) C⁻¹ (C + στR2) x`.
    fn apply_factored(&self, x: &[f64], c: &[f64], split: &TriangularSplit, st: f64) -> Vec<f64> {
        let upper = split.apply_shifted(Triangle::Upper, c, st, x);
        let scaled: Vec<f64> = upper.iter().zip(c).map(|(u, ci)| u / ci).collect();
        split.apply_shifted(Triangle::Lower, c, st, &scaled)
    }

    /// Advances any state by one level with the configured scheme.
    pub fn step(&self, state: &State, phi: &ScalarField) -> Result<(State, SolverReport)> {
        if !state.matches(self.cfg.kind) {
            return Err(Error::Config(format!("state does not match scheme {}", self.cfg.kind.name())));
        }
        Ok(match (self.cfg.kind, state) {
            (SchemeKind::ScalarWeighted, State::Scalar(y)) => {
                let (y, r) = self.step_scalar_weighted(y, phi)?;
                (State::Scalar(y), r)
            }
            (SchemeKind::FluxSystem, State::System { y, g }) => {
                let (y, g, r) = self.step_flux_system(y, g, phi)?;
                (State::System { y, g }, r)
            }
            (SchemeKind::FluxWeighted, State::Flux(g)) => {
                let (g, r) = self.step_flux_weighted(g, phi)?;
                (State::Flux(g), r)
            }
            (SchemeKind::LodDiagonal, State::Flux(g)) => {
                let (g, r) = self.step_lod_diagonal(g, phi)?;
                (State::Flux(g), r)
            }
            (SchemeKind::LodTriangular, State::Flux(g)) => {
                let (g, r) = self.step_lod_triangular(g, phi)?;
                (State::Flux(g), r)
            }
            _ => unreachable!("checked by State::matches"),
        })
    }

    /// Applies the energy operator of the scheme's stability estimate to a
    /// flux: `C` for `flux_weighted`, the `B` forms for the LOD schemes.
    /// Scalar schemes have no flux energy and return `None`.
    pub fn apply_energy(&self, g: &FluxField) -> Result<Option<FluxField>> {
        let grid = self.grid();
        let tau = self.cfg.tau;
        let st = self.sigma_tau();
        let out = match self.cfg.kind {
            SchemeKind::ScalarWeighted | SchemeKind::FluxSystem => return Ok(None),
            SchemeKind::FluxWeighted => self.k.apply_c(g)?,
            SchemeKind::LodDiagonal => {
                let c = self.require_c_diag()?;
                let base = self.apply_c_plus_q(g, c, st);
                let rg = apply_r(g);
                let v = base.iter().zip(rg.data()).map(|(b, r)| b - 0.5 * tau * r).collect();
                FluxField::from_values(grid, v)?
            }
            SchemeKind::LodTriangular => {
                let c = self.require_c_diag()?;
                let split = self.require_split()?;
                let base = self.apply_factored(g.data(), c, split, st);
                let rg = apply_r(g);
                let v = base.iter().zip(rg.data()).map(|(b, r)| b - 0.5 * tau * r).collect();
                FluxField::from_values(grid, v)?
            }
        };
        Ok(Some(out))
    }

    /// Monitored norm of a state; `None` when the energy operator is not
    /// positive on it.
    pub fn state_norm(&self, state: &State) -> Result<Option<f64>> {
        match self.cfg.kind {
            SchemeKind::ScalarWeighted | SchemeKind::FluxSystem => {
                Ok(Some(state.scalar().ok_or_else(|| Error::Config("scalar state expected".into()))?.norm()))
            }
            _ => {
                let g = state.flux().ok_or_else(|| Error::Config("flux state expected".into()))?;
                match operator_weighted_norm(g, |v| self.apply_energy(v).expect("grid checked").expect("flux energy")) {
                    Ok(n) => Ok(Some(n)),
                    Err(Error::NotPositive { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Source norm entering the levelwise estimate: `‖φ‖`, `‖Dφ‖_K`, or
    /// `‖Dφ‖_{B⁻¹}` (one conjugate-gradient solve with `B`).
    pub fn source_norm(&self, phi: &ScalarField) -> Result<Option<f64>> {
        let grid = self.grid();
        match self.cfg.kind {
            SchemeKind::ScalarWeighted | SchemeKind::FluxSystem => Ok(Some(phi.norm())),
            SchemeKind::FluxWeighted => {
                let dphi = apply_d(phi);
                let form = self.k.apply_k(&dphi)?.dot(&dphi)?;
                Ok(Some(form.max(0.0).sqrt()))
            }
            SchemeKind::LodDiagonal | SchemeKind::LodTriangular => {
                let dphi = apply_d(phi);
                if dphi.data().iter().all(|v| *v == 0.0) {
                    return Ok(Some(0.0));
                }
                let op = FnOperator::new(grid.flux_len(), |x: &[f64]| {
                    let v = FluxField::from_values(grid, x.to_vec()).expect("dimension");
                    self.apply_energy(&v).expect("grid").expect("flux energy").into_values()
                });
                let (z, rep) = solve_spd(&op, dphi.data(), None, self.cfg.cg_tol, self.cfg.cg_max_iter);
                if !rep.converged {
                    return Ok(None);
                }
                let form = grid.cell_area() * dot(&z, dphi.data());
                Ok(if form >= 0.0 { Some(form.sqrt()) } else { None })
            }
        }
    }
}

/// Index lists of the lines along which `Q` is tridiagonal: rows of the
/// `α = 1` components and columns of the `α = 2` components.
fn line_layout(grid: &Grid2D) -> Vec<(Vec<usize>, f64)> {
    let mut lines = Vec::new();
    for comp in Comp::ALL {
        let r = grid.half_grid(comp);
        let off = grid.flux_offset(comp);
        if comp.axis() == 1 {
            for i2 in r.lo2..=r.hi2 {
                let idx = (r.lo1..=r.hi1).map(|i1| off + r.local(i1, i2).unwrap()).collect();
                lines.push((idx, grid.h1()));
            }
        } else {
            for i1 in r.lo1..=r.hi1 {
                let idx = (r.lo2..=r.hi2).map(|i2| off + r.local(i1, i2).unwrap()).collect();
                lines.push((idx, grid.h2()));
            }
        }
    }
    lines
}

/// Final state and per-step records of an evolution.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub state: State,
    pub initial_norm: Option<f64>,
    pub records: Vec<StepRecord>,
}

/// Runs `N = T/τ` steps from `initial`, checking the scheme's levelwise
/// estimate at every step when monitoring is on.
pub fn run_evolution(initial: State, source: &dyn Source, k: &KOperator, cfg: &SchemeConfig) -> Result<Evolution> {
    run_evolution_with(initial, source, k, cfg, |_, _, _| {})
}

/// [`run_evolution`] with an observer called on every level, `n = 0`
/// included, as `observer(n, tⁿ, state)`.
pub fn run_evolution_with(
    initial: State,
    source: &dyn Source,
    k: &KOperator,
    cfg: &SchemeConfig,
    mut observer: impl FnMut(usize, f64, &State),
) -> Result<Evolution> {
    let stepper = Stepper::new(k, *cfg)?;
    if !initial.matches(cfg.kind) {
        return Err(Error::Config(format!("initial state does not match scheme {}", cfg.kind.name())));
    }
    let grid = *k.grid();
    let steps = cfg.n_steps();
    let mut state = initial;
    observer(0, 0.0, &state);
    let mut norm = if cfg.monitor { stepper.state_norm(&state)? } else { None };
    let initial_norm = norm;
    let mut records = Vec::with_capacity(steps);
    for n in 0..steps {
        let t_n = n as f64 * cfg.tau;
        let phi = sample_source(grid, source, cfg.source_time(t_n));
        let (next, solver) = stepper.step(&state, &phi)?;
        let t_next = (n + 1) as f64 * cfg.tau;
        let record = if cfg.monitor {
            let new_norm = stepper.state_norm(&next)?;
            let rhs_norm = stepper.source_norm(&phi)?;
            let rec = StepRecord {
                n: n + 1,
                t: t_next,
                norm: new_norm,
                prev_norm: norm,
                rhs_norm,
                estimate: check_estimate(new_norm, norm, rhs_norm, cfg.tau),
                solver,
            };
            norm = new_norm;
            rec
        } else {
            StepRecord {
                n: n + 1,
                t: t_next,
                norm: None,
                prev_norm: None,
                rhs_norm: None,
                estimate: EstimateStatus::NotMonitored,
                solver,
            }
        };
        records.push(record);
        state = next;
        observer(n + 1, t_next, &state);
    }
    Ok(Evolution {
        state,
        initial_norm,
        records,
    })
}
