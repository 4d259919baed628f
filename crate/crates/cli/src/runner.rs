//! Executes validated experiments and writes their result files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fluxlod::analysis::{convergence_study, stability_probe, StudySpec};
use fluxlod::operators::KOperator;
use fluxlod::schemes::{run_evolution, EstimateStatus, NoSource, SchemeConfig, Source, State};
use fluxlod::{Grid2D, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Coefficients, ConvergenceSpec, EvolveSpec, Experiment, InitialData, RunConfig, SourceSpec, StabilitySpec, SweepSpec};
use crate::error::CliError;
use crate::output::{emit_csv, write_json, ConvergenceRow, StabilityRow, StepRow, SweepRow};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub name: String,
    pub study: &'static str,
    pub pass: bool,
    pub files: Vec<String>,
    pub summary: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub version: &'static str,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    pub config: RunConfig,
    pub experiments: Vec<Value>,
    pub pass: bool,
}

fn initial_field(grid: Grid2D, coefficients: &Coefficients, initial: InitialData, rng: &mut ChaCha8Rng) -> Result<ScalarField, CliError> {
    Ok(match initial {
        InitialData::Manufactured => coefficients
            .case(&grid)?
            .ok_or_else(|| CliError::Config("manufactured initial data needs a case".into()))?
            .initial(grid),
        InitialData::Random => {
            let v = (0..grid.scalar_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ScalarField::from_values(grid, v)?
        }
        InitialData::Zero => ScalarField::zeros(grid),
    })
}

fn source_of(grid: &Grid2D, coefficients: &Coefficients, source: SourceSpec) -> Result<Box<dyn Source>, CliError> {
    Ok(match source {
        SourceSpec::Zero => Box::new(NoSource),
        SourceSpec::Manufactured => Box::new(
            coefficients
                .case(grid)?
                .ok_or_else(|| CliError::Config("manufactured source needs a case".into()))?,
        ),
    })
}

fn evolve(s: &EvolveSpec, dir: &Path, rng: &mut ChaCha8Rng) -> Result<ExperimentOutcome, CliError> {
    let grid = s.grid.build()?;
    let k = KOperator::new(s.coefficients.build(grid, s.chi)?)?;
    let u0 = initial_field(grid, &s.coefficients, s.initial, rng)?;
    let source = source_of(&grid, &s.coefficients, s.source)?;
    let ev = run_evolution(State::initial(s.scheme.kind, &u0, &k)?, source.as_ref(), &k, &s.scheme)?;
    emit_csv(ev.records.iter().map(|r| StepRow(*r)), &dir.join("steps.csv"))?;
    let count = |st: EstimateStatus| ev.records.iter().filter(|r| r.estimate == st).count();
    let (violated, undefined) = (count(EstimateStatus::Violated), count(EstimateStatus::Undefined));
    let pass = !s.require_estimate || (violated == 0 && undefined == 0 && s.scheme.monitor);
    Ok(ExperimentOutcome {
        name: s.name.clone(),
        study: "evolve",
        pass,
        files: vec!["steps.csv".into()],
        summary: json!({
            "steps": ev.records.len(),
            "initial_norm": ev.initial_norm,
            "violations": violated,
            "undefined": undefined,
        }),
    })
}

fn sweep(s: &SweepSpec, dir: &Path, rng: &mut ChaCha8Rng) -> Result<ExperimentOutcome, CliError> {
    let grid = s.grid.build()?;
    let k = KOperator::new(s.coefficients.build(grid, s.chi)?)?;
    let u0 = initial_field(grid, &s.coefficients, s.initial, rng)?;
    let source = source_of(&grid, &s.coefficients, s.source)?;
    let pairs: Vec<(f64, f64)> = s.sigmas.iter().flat_map(|&a| s.taus.iter().map(move |&t| (a, t))).collect();
    let rows = pairs
        .par_iter()
        .map(|&(sigma, tau)| {
            let cfg = SchemeConfig::new(s.kind, sigma, tau, tau * s.steps as f64)?;
            let ev = run_evolution(State::initial(s.kind, &u0, &k)?, source.as_ref(), &k, &cfg)?;
            Ok(SweepRow::from_records(sigma, tau, ev.initial_norm, &ev.records))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let failing = rows.iter().filter(|r| r.violations + r.undefined > 0).count();
    emit_csv(rows.iter().copied(), &dir.join("sweep.csv"))?;
    Ok(ExperimentOutcome {
        name: s.name.clone(),
        study: "sweep",
        pass: !s.require_estimate || failing == 0,
        files: vec!["sweep.csv".into()],
        summary: json!({ "runs": rows.len(), "runs_with_violations": failing }),
    })
}

fn convergence(s: &ConvergenceSpec, dir: &Path) -> Result<ExperimentOutcome, CliError> {
    let case = s.case()?;
    let band = s.resolved_band();
    let spec = StudySpec {
        scheme: s.scheme()?,
        chi: s.chi,
        refinement: s.refinement.clone(),
        reference: s.reference,
        measure: s.resolved_measure(),
        band,
    };
    let report = convergence_study(&case, &spec)?;
    let rows = report
        .levels
        .iter()
        .zip(&report.parameter)
        .zip(&report.running_slope)
        .map(|((l, &p), &slope)| ConvergenceRow {
            level: l.level,
            h_or_tau: p,
            error: l.error,
            slope_running: slope,
        });
    emit_csv(rows, &dir.join("convergence.csv"))?;
    Ok(ExperimentOutcome {
        name: s.name.clone(),
        study: "convergence",
        pass: report.pass,
        files: vec!["convergence.csv".into()],
        summary: json!({
            "slope": report.slope,
            "band": [band.min, if band.max.is_finite() { Some(band.max) } else { None }],
        }),
    })
}

fn stability(s: &StabilitySpec, dir: &Path) -> Result<ExperimentOutcome, CliError> {
    let grid = s.grid.build()?;
    let k = KOperator::new(s.coefficients.build(grid, s.chi)?)?;
    let pairs: Vec<(f64, f64)> = s.sigmas.iter().flat_map(|&a| s.taus.iter().map(move |&t| (a, t))).collect();
    let certs = pairs
        .par_iter()
        .map(|&(sigma, tau)| Ok(stability_probe(&SchemeConfig::new(s.kind, sigma, tau, tau)?, &k)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    emit_csv(certs.iter().map(|c| StabilityRow(*c)), &dir.join("stability.csv"))?;
    let stable = certs.iter().filter(|c| c.stable).count();
    let max_norm = certs.iter().filter_map(|c| c.norm_t).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(ExperimentOutcome {
        name: s.name.clone(),
        study: "stability",
        pass: !s.expect_stable || stable == certs.len(),
        files: vec!["stability.csv".into()],
        summary: json!({ "probes": certs.len(), "certified": stable, "max_norm_T": max_norm }),
    })
}

/// Runs one experiment, writing its files under `dir`.
pub fn run_experiment(exp: &Experiment, dir: &Path, seed: u64, index: u64) -> Result<ExperimentOutcome, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    match exp {
        Experiment::Evolve(s) => evolve(s, dir, &mut rng),
        Experiment::Sweep(s) => sweep(s, dir, &mut rng),
        Experiment::Convergence(s) => convergence(s, dir),
        Experiment::Stability(s) => stability(s, dir),
    }
}

/// Reads, validates and runs a configuration file. Configuration problems
/// are reported before anything is computed.
pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = RunConfig::parse(&text)?;
    run_config(config, opts)
}

pub fn run_config(config: RunConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    config.validate()?;
    let seed = opts.seed.or(config.seed).unwrap_or(0);
    let workers = opts
        .workers
        .or(config.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Config("workers must be positive".into()));
    }
    fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let results: Vec<Result<ExperimentOutcome, CliError>> = pool.install(|| {
        config
            .experiments
            .par_iter()
            .enumerate()
            .map(|(i, exp)| run_experiment(exp, &opts.out.join(exp.name()), seed, i as u64))
            .collect()
    });
    let mut pass = true;
    let mut experiments = Vec::with_capacity(results.len());
    for (exp, res) in config.experiments.iter().zip(&results) {
        match res {
            Ok(o) => {
                pass &= o.pass;
                experiments.push(serde_json::to_value(o).expect("serializable outcome"));
            }
            Err(e) => {
                pass = false;
                experiments.push(json!({ "name": exp.name(), "study": exp.study(), "pass": false, "error": e.to_string() }));
            }
        }
    }
    let summary = RunSummary {
        version: fluxlod::VERSION,
        seed,
        workers,
        wall_time_s: start.elapsed().as_secs_f64(),
        config,
        experiments,
        pass,
    };
    write_json(&summary, &opts.out.join("run.json"))?;
    if let Some(Err(e)) = results.into_iter().find(|r| r.is_err()) {
        return Err(e);
    }
    Ok(summary)
}

/// Exit status of a run: 0 when every criterion passed, 1 on criteria
/// failures or run-time errors, 2 on configuration errors.
pub fn run(path: &Path, opts: &RunOptions) -> i32 {
    match run_config_file(path, opts) {
        Ok(summary) => {
            for e in &summary.experiments {
                let name = e["name"].as_str().unwrap_or("?");
                let ok = e["pass"].as_bool().unwrap_or(false);
                eprintln!("{} {name}", if ok { "pass" } else { "FAIL" });
            }
            if summary.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
