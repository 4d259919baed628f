//! Experiment configuration documents.

use std::collections::HashSet;

use fluxlod::analysis::{make_manufactured, ErrorMeasure, ManufacturedCase, Reference, Refinement, SlopeBand, TimeStep};
use fluxlod::operators::KOperator;
use fluxlod::schemes::{SchemeConfig, SchemeKind, SourceTime, Stepper};
use fluxlod::{CoeffField, Grid2D};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub experiments: Vec<Experiment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "one")]
    pub l1: f64,
    #[serde(default = "one")]
    pub l2: f64,
    pub n1: usize,
    #[serde(default)]
    pub n2: Option<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid2D, CliError> {
        Ok(Grid2D::new(self.l1, self.l2, self.n1, self.n2.unwrap_or(self.n1))?)
    }
}

/// Either a built-in case or nodal tables indexed `i1 + i2 (N1 + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficients {
    Case(String),
    Tables { k11: Vec<f64>, k12: Vec<f64>, k22: Vec<f64> },
}

impl Coefficients {
    pub fn build(&self, grid: Grid2D, chi: f64) -> Result<CoeffField, CliError> {
        Ok(match self {
            Coefficients::Case(id) => make_manufactured(id)?.coeff_field(grid, chi)?,
            Coefficients::Tables { k11, k12, k22 } => CoeffField::from_tables(grid, chi, k11.clone(), k12.clone(), k22.clone())?,
        })
    }

    pub fn case(&self, grid: &Grid2D) -> Result<Option<ManufacturedCase>, CliError> {
        Ok(match self {
            Coefficients::Case(id) => {
                let base = make_manufactured(id)?;
                Some(ManufacturedCase::new(base.id(), grid.l1(), grid.l2()))
            }
            Coefficients::Tables { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// `u(·, 0)` of the manufactured case
    #[default]
    Manufactured,
    /// Uniform on `[−1, 1]` from the run seed
    Random,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSpec {
    #[default]
    Manufactured,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum Experiment {
    Evolve(EvolveSpec),
    Sweep(SweepSpec),
    Convergence(ConvergenceSpec),
    Stability(StabilitySpec),
}

impl Experiment {
    pub fn name(&self) -> &str {
        match self {
            Experiment::Evolve(s) => &s.name,
            Experiment::Sweep(s) => &s.name,
            Experiment::Convergence(s) => &s.name,
            Experiment::Stability(s) => &s.name,
        }
    }

    pub fn study(&self) -> &'static str {
        match self {
            Experiment::Evolve(_) => "evolve",
            Experiment::Sweep(_) => "sweep",
            Experiment::Convergence(_) => "convergence",
            Experiment::Stability(_) => "stability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSpec {
    pub name: String,
    pub grid: GridSpec,
    pub coefficients: Coefficients,
    #[serde(default = "half")]
    pub chi: f64,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub source: SourceSpec,
    /// Fail unless every step satisfies the levelwise estimate.
    #[serde(default = "yes")]
    pub require_estimate: bool,
}

/// One evolution per `(σ, τ)` pair, summarized in a single table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    pub grid: GridSpec,
    pub coefficients: Coefficients,
    #[serde(default = "half")]
    pub chi: f64,
    pub kind: SchemeKind,
    pub sigmas: Vec<f64>,
    pub taus: Vec<f64>,
    /// Number of steps per run.
    pub steps: usize,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default = "yes")]
    pub require_estimate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub name: String,
    pub case: String,
    #[serde(default = "one")]
    pub l1: f64,
    #[serde(default = "one")]
    pub l2: f64,
    #[serde(default = "half")]
    pub chi: f64,
    pub kind: SchemeKind,
    pub sigma: f64,
    #[serde(default = "half")]
    pub t_final: f64,
    #[serde(default)]
    pub source_time: SourceTime,
    pub refinement: Refinement,
    #[serde(default)]
    pub reference: Reference,
    /// Defaults to the scalar error, or the flux error for flux-only schemes.
    #[serde(default)]
    pub measure: Option<ErrorMeasure>,
    /// Defaults to the expected order of the scheme and measure.
    #[serde(default)]
    pub band: Option<SlopeBand>,
}

impl ConvergenceSpec {
    pub fn resolved_measure(&self) -> ErrorMeasure {
        self.measure.unwrap_or(if self.kind.evolves_flux() {
            ErrorMeasure::Flux
        } else {
            ErrorMeasure::Scalar
        })
    }

    pub fn resolved_band(&self) -> SlopeBand {
        if let Some(b) = self.band {
            return b;
        }
        match (&self.refinement, self.resolved_measure()) {
            (Refinement::Space { .. }, ErrorMeasure::Scalar) => SlopeBand::at_least(1.8),
            (Refinement::Space { .. }, ErrorMeasure::Flux) => SlopeBand::at_least(0.9),
            (Refinement::Time { .. }, _) => {
                let second = self.sigma == 0.5 && self.kind != SchemeKind::LodDiagonal;
                if second {
                    SlopeBand::at_least(1.8)
                } else {
                    SlopeBand::between(0.8, 1.2)
                }
            }
        }
    }

    pub fn case(&self) -> Result<ManufacturedCase, CliError> {
        let base = make_manufactured(&self.case)?;
        Ok(ManufacturedCase::new(base.id(), self.l1, self.l2))
    }

    /// Template configuration; the time step is set per level.
    pub fn scheme(&self) -> Result<SchemeConfig, CliError> {
        let tau = match &self.refinement {
            Refinement::Space { cells, time_step } => {
                let n = cells.iter().copied().max().unwrap_or(1).max(1);
                time_step.tau(self.l1.max(self.l2) / n as f64)
            }
            Refinement::Time { taus, .. } => taus.iter().copied().fold(f64::INFINITY, f64::min),
        };
        let mut cfg = SchemeConfig::new(self.kind, self.sigma, tau, self.t_final.max(tau))?;
        cfg.t_final = self.t_final;
        cfg.source_time = self.source_time;
        cfg.monitor = false;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySpec {
    pub name: String,
    pub grid: GridSpec,
    pub coefficients: Coefficients,
    #[serde(default = "half")]
    pub chi: f64,
    pub kind: SchemeKind,
    pub sigmas: Vec<f64>,
    pub taus: Vec<f64>,
    /// Fail unless every probed pair certifies `‖T‖_B ≤ 1`.
    #[serde(default = "yes")]
    pub expect_stable: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("cannot parse config: {e}")))
    }

    /// Checks every experiment against the library preconditions without
    /// running anything.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.experiments.is_empty() {
            return Err(CliError::Config("no experiments defined".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        let mut names = HashSet::new();
        for exp in &self.experiments {
            let name = exp.name();
            let safe = !name.is_empty()
                && name != "."
                && name != ".."
                && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !safe {
                return Err(CliError::Config(format!(
                    "experiment name '{name}' must be non-empty and use only letters, digits, '-', '_' or '.'"
                )));
            }
            if !names.insert(name.to_string()) {
                return Err(CliError::Config(format!("duplicate experiment name '{name}'")));
            }
            validate_experiment(exp).map_err(|e| CliError::Config(format!("experiment '{name}': {}", e.detail())))?;
        }
        Ok(())
    }
}

fn check_scheme(k: &KOperator, cfg: SchemeConfig) -> Result<(), CliError> {
    Stepper::new(k, cfg)?;
    Ok(())
}

fn check_sources(coefficients: &Coefficients, initial: InitialData, source: SourceSpec) -> Result<(), CliError> {
    let needs_case = initial == InitialData::Manufactured || source == SourceSpec::Manufactured;
    if needs_case && matches!(coefficients, Coefficients::Tables { .. }) {
        return Err(CliError::Config(
            "manufactured initial data or source requires a coefficient case, not tables".into(),
        ));
    }
    Ok(())
}

fn validate_experiment(exp: &Experiment) -> Result<(), CliError> {
    match exp {
        Experiment::Evolve(s) => {
            let grid = s.grid.build()?;
            let k = KOperator::new(s.coefficients.build(grid, s.chi)?)?;
            check_sources(&s.coefficients, s.initial, s.source)?;
            check_scheme(&k, s.scheme)
        }
        Experiment::Sweep(s) => {
            let grid = s.grid.build()?;
            let k = KOperator::new(s.coefficients.build(grid, s.chi)?)?;
            check_sources(&s.coefficients, s.initial, s.source)?;
            if s.sigmas.is_empty() || s.taus.is_empty() || s.steps == 0 {
                return Err(CliError::Config("sweep needs sigmas, taus and a positive step count".into()));
            }
            for &sigma in &s.sigmas {
                for &tau in &s.taus {
                    check_scheme(&k, SchemeConfig::new(s.kind, sigma, tau, tau * s.steps as f64)?)?;
                }
            }
            Ok(())
        }
        Experiment::Convergence(s) => {
            let case = s.case()?;
            let levels = match &s.refinement {
                Refinement::Space { cells, time_step } => {
                    let (TimeStep::Fixed(t) | TimeStep::ScaledH2(t)) = time_step;
                    if !(*t > 0.0) {
                        return Err(CliError::Config("time step must be positive".into()));
                    }
                    cells.clone()
                }
                Refinement::Time { cells, taus } => {
                    if taus.iter().any(|t| !(*t > 0.0 && *t <= s.t_final)) {
                        return Err(CliError::Config("every tau must lie in (0, t_final]".into()));
                    }
                    vec![*cells; taus.len()]
                }
            };
            if levels.len() < 2 {
                return Err(CliError::Config("a convergence study needs at least two levels".into()));
            }
            s.scheme()?;
            for n in levels {
                let grid = Grid2D::new(s.l1, s.l2, n, n)?;
                let k = KOperator::new(case.coeff_field(grid, s.chi)?)?;
                if s.kind.is_lod() && k.coeff().has_mixed_terms() {
                    return Err(fluxlod::Error::MixedCoefficients(s.kind.name()).into());
                }
                if s.resolved_measure() == ErrorMeasure::Scalar && s.kind.evolves_flux() {
                    return Err(CliError::Config(format!("{} has no scalar unknown; use the flux measure", s.kind.name())));
                }
            }
            Ok(())
        }
        Experiment::Stability(s) => {
            let grid = s.grid.build()?;
            let k = KOperator::new(s.coefficients.build(grid, s.chi)?)?;
            if s.sigmas.is_empty() || s.taus.is_empty() {
                return Err(CliError::Config("stability needs sigmas and taus".into()));
            }
            let dim = if s.kind.evolves_flux() { grid.flux_len() } else { grid.scalar_len() };
            if dim > fluxlod::analysis::PROBE_MAX_UNKNOWNS {
                return Err(CliError::Config(format!(
                    "grid too large for a dense probe: {dim} unknowns, limit {}",
                    fluxlod::analysis::PROBE_MAX_UNKNOWNS
                )));
            }
            for &sigma in &s.sigmas {
                for &tau in &s.taus {
                    check_scheme(&k, SchemeConfig::new(s.kind, sigma, tau, tau)?)?;
                }
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        RunConfig::parse(text).unwrap()
    }

    #[test]
    fn default_bands_follow_expected_orders() {
        let cfg = parse(
            r#"{"experiments": [
            {"study": "convergence", "name": "s", "case": "a", "kind": "scalar_weighted", "sigma": 1.0,
             "refinement": {"space": {"cells": [4, 8], "time_step": {"fixed": 0.01}}}},
            {"study": "convergence", "name": "f", "case": "a", "kind": "flux_weighted", "sigma": 1.0, "measure": "flux",
             "refinement": {"space": {"cells": [4, 8], "time_step": {"fixed": 0.01}}}},
            {"study": "convergence", "name": "t2", "case": "a", "kind": "lod_triangular", "sigma": 0.5,
             "refinement": {"time": {"cells": 4, "taus": [0.1, 0.05]}}},
            {"study": "convergence", "name": "t1", "case": "a", "kind": "lod_diagonal", "sigma": 0.5,
             "refinement": {"time": {"cells": 4, "taus": [0.1, 0.05]}}}
        ]}"#,
        );
        let bands: Vec<SlopeBand> = cfg
            .experiments
            .iter()
            .map(|e| match e {
                Experiment::Convergence(c) => c.resolved_band(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(bands[0], SlopeBand::at_least(1.8));
        assert_eq!(bands[1], SlopeBand::at_least(0.9));
        assert_eq!(bands[2], SlopeBand::at_least(1.8));
        assert_eq!(bands[3], SlopeBand::between(0.8, 1.2));
        cfg.validate().unwrap();
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let one = r#"{"study": "stability", "name": "x", "grid": {"n1": 3}, "coefficients": {"case": "a"},
            "kind": "scalar_weighted", "sigmas": [0.5], "taus": [1.0]}"#;
        let cfg = parse(&format!(r#"{{"experiments": [{one}, {one}]}}"#));
        assert!(matches!(cfg.validate(), Err(CliError::Config(m)) if m.contains("duplicate")));
    }

    #[test]
    fn inline_tables_are_accepted() {
        let n = 9;
        let ones = vec!["1.0"; n].join(",");
        let zeros = vec!["0.0"; n].join(",");
        let text = format!(
            r#"{{"experiments": [{{"study": "stability", "name": "t", "grid": {{"n1": 2}},
            "coefficients": {{"tables": {{"k11": [{ones}], "k12": [{zeros}], "k22": [{ones}]}}}},
            "kind": "lod_diagonal", "sigmas": [2.0], "taus": [1.0]}}]}}"#
        );
        parse(&text).validate().unwrap();
    }

    #[test]
    fn scalar_measure_on_flux_scheme_is_rejected() {
        let cfg = parse(
            r#"{"experiments": [{"study": "convergence", "name": "x", "case": "c", "kind": "lod_diagonal", "sigma": 2.0,
             "measure": "scalar", "refinement": {"time": {"cells": 4, "taus": [0.1, 0.05]}}}]}"#,
        );
        assert!(cfg.validate().is_err());
    }
}
