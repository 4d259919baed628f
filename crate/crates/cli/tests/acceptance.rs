//! End-to-end acceptance suite. Prints one line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fluxlod::analysis::*;
use fluxlod::operators::{apply_d, apply_dstar, apply_l_stencil};
use fluxlod::schemes::*;
use fluxlod::solvers::{relative_residual, solve_triangular_diag, Tridiagonal};
use fluxlod::sparse::{Triangle, TriangularSplit};
use fluxlod::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn random_scalar(grid: Grid2D, rng: &mut impl Rng) -> ScalarField {
    ScalarField::from_values(grid, (0..grid.scalar_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_flux(grid: Grid2D, rng: &mut impl Rng) -> FluxField {
    FluxField::from_values(grid, (0..grid.flux_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn case_k(id: &str, grid: Grid2D, chi: f64) -> (ManufacturedCase, KOperator) {
    let case = ManufacturedCase::on_grid(CaseId::parse(id).unwrap(), &grid);
    let k = KOperator::new(case.coeff_field(grid, chi).unwrap()).unwrap();
    (case, k)
}

fn adjointness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let grid = Grid2D::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(2..=16), rng.gen_range(2..=16)).unwrap();
        let y = random_scalar(grid, &mut rng);
        let g = random_flux(grid, &mut rng);
        let lhs = flux_inner_product(&apply_d(&y), &g).unwrap();
        let rhs = scalar_inner_product(&y, &apply_dstar(&g)).unwrap();
        worst = worst.max((lhs - rhs).abs() / (y.norm() * g.norm()));
    }
    ensure(worst <= 1e-12, format!("max |(Dy,g) - (y,D*g)| / (|y||g|) = {worst:.2e}"))
}

fn operator_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for chi in [0.0, 0.5, 1.0] {
        for grid in [Grid2D::unit_square(16).unwrap(), Grid2D::new(1.0, 2.0, 9, 13).unwrap()] {
            let (_, k) = case_k("b", grid, chi);
            for _ in 0..50 {
                let y = random_scalar(grid, &mut rng);
                let a = k.apply_a(&y).unwrap();
                let l = apply_l_stencil(&y, k.coeff()).unwrap();
                let diff = a.values().iter().zip(l.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                let scale = a.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
                worst = worst.max(diff / scale);
            }
        }
    }
    ensure(worst <= 1e-12, format!("max |D*KDy - L(chi)y|_inf / |D*KDy|_inf = {worst:.2e} over chi in {{0, 0.5, 1}}"))
}

fn equivalence() -> Check {
    let grid = Grid2D::unit_square(8).unwrap();
    let (case, k) = case_k("b", grid, 0.5);
    let mut worst: f64 = 0.0;
    for sigma in [0.5, 1.0] {
        let mut cfg = SchemeConfig::new(SchemeKind::ScalarWeighted, sigma, 0.01, 0.5).unwrap();
        cfg.cg_tol = 1e-13;
        let mut scalar = Vec::new();
        let init = State::initial(cfg.kind, &case.initial(grid), &k).unwrap();
        run_evolution_with(init, &case, &k, &cfg, |_, _, s| scalar.push(s.scalar().unwrap().clone())).map_err(|e| e.to_string())?;
        let cfg = cfg.with_kind(SchemeKind::FluxSystem);
        let mut system = Vec::new();
        let init = State::initial(cfg.kind, &case.initial(grid), &k).unwrap();
        run_evolution_with(init, &case, &k, &cfg, |_, _, s| system.push(s.scalar().unwrap().clone())).map_err(|e| e.to_string())?;
        if scalar.len() != 51 || system.len() != 51 {
            return Err("trajectory length is not 50 steps".into());
        }
        for (a, b) in scalar.iter().zip(&system) {
            let mut d = b.clone();
            d.axpy(-1.0, a).unwrap();
            worst = worst.max(d.norm() / a.norm());
        }
    }
    ensure(worst <= 1e-10, format!("max relative y difference over 50 steps, sigma in {{0.5, 1}}: {worst:.2e}"))
}

/// Probe at every τ, then a 200-step forced run per τ with the levelwise
/// estimate checked at every step.
fn stability_criterion(kind: SchemeKind, sigma: f64, id: &str, taus: &[f64]) -> Check {
    let grid = Grid2D::unit_square(6).unwrap();
    let (case, k) = case_k(id, grid, 0.5);
    let mut norms = Vec::new();
    let mut failures = Vec::new();
    let mut steps = 0;
    for &tau in taus {
        let cfg = SchemeConfig::new(kind, sigma, tau, 200.0 * tau).unwrap();
        let cert = stability_probe(&cfg, &k).map_err(|e| e.to_string())?;
        match cert.norm_t {
            Some(n) if cert.b_spd && cert.stable => norms.push(format!("{n:.12}")),
            _ => failures.push(format!("tau={tau}: {cert:?}")),
        }
        let init = State::initial(kind, &case.initial(grid), &k).unwrap();
        let ev = run_evolution(init, &case, &k, &cfg).map_err(|e| e.to_string())?;
        steps += ev.records.len();
        let bad: Vec<usize> = ev.records.iter().filter(|r| r.estimate != EstimateStatus::Satisfied).map(|r| r.n).collect();
        if ev.records.len() != 200 || !bad.is_empty() {
            failures.push(format!("tau={tau}: estimate fails at steps {bad:?}"));
        }
    }
    let detail = format!("norm_T = [{}] for tau = {taus:?}; {steps} monitored steps", norms.join(", "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn record_lod_diagonal_low_weight() -> String {
    let grid = Grid2D::unit_square(6).unwrap();
    let (case, k) = case_k("aniso", grid, 0.5);
    let mut parts = Vec::new();
    for tau in [0.01, 1.0, 100.0] {
        let cfg = SchemeConfig::new(SchemeKind::LodDiagonal, 0.5, tau, 200.0 * tau).unwrap();
        let cert = stability_probe(&cfg, &k).unwrap();
        let init = State::initial(cfg.kind, &case.initial(grid), &k).unwrap();
        let ev = run_evolution(init, &case, &k, &cfg).unwrap();
        let count = |s: EstimateStatus| ev.records.iter().filter(|r| r.estimate == s).count();
        parts.push(format!(
            "tau={tau}: B_spd={} norm_T={:?} violated={} undefined={}",
            cert.b_spd,
            cert.norm_t,
            count(EstimateStatus::Violated),
            count(EstimateStatus::Undefined)
        ));
    }
    parts.join("; ")
}

fn study(id: &str, kind: SchemeKind, sigma: f64, refinement: Refinement, reference: Reference, measure: ErrorMeasure, band: SlopeBand) -> std::result::Result<f64, String> {
    let spec = StudySpec {
        scheme: SchemeConfig::new(kind, sigma, 0.1, 0.5).unwrap(),
        chi: 0.5,
        refinement,
        reference,
        measure,
        band,
    };
    let r = convergence_study(&make_manufactured(id).unwrap(), &spec).map_err(|e| e.to_string())?;
    let s = r.slope.ok_or("no slope")?;
    if r.pass {
        Ok(s)
    } else {
        Err(format!("slope {s:.3} outside [{}, {}]", band.min, band.max))
    }
}

fn convergence_orders() -> Check {
    let space = |cells: Vec<usize>| Refinement::Space {
        cells,
        time_step: TimeStep::ScaledH2(0.25),
    };
    let time = |cells: usize, taus: Vec<f64>| Refinement::Time { cells, taus };
    let second = SlopeBand::at_least(1.8);
    let first = SlopeBand::between(0.8, 1.2);
    use ErrorMeasure::{Flux, Scalar};
    use Reference::{Exact, Semidiscrete};
    use SchemeKind::*;
    let runs: Vec<(&str, std::result::Result<f64, String>)> = vec![
        ("space a scalar", study("a", ScalarWeighted, 1.0, space(vec![8, 16, 32]), Exact, Scalar, second)),
        ("space b scalar", study("b", ScalarWeighted, 1.0, space(vec![8, 16, 32]), Exact, Scalar, second)),
        ("time scalar s=0.5", study("a", ScalarWeighted, 0.5, time(8, vec![0.1, 0.05, 0.025]), Semidiscrete, Scalar, second)),
        ("time scalar s=1", study("a", ScalarWeighted, 1.0, time(8, vec![0.01, 0.005, 0.0025]), Semidiscrete, Scalar, first)),
        ("time triangular s=0.5", study("a", LodTriangular, 0.5, time(8, vec![0.01, 0.005, 0.0025]), Semidiscrete, Flux, second)),
        ("time triangular s=1", study("a", LodTriangular, 1.0, time(8, vec![1e-4, 5e-5, 2.5e-5]), Semidiscrete, Flux, first)),
        ("time diagonal s=2", study("c", LodDiagonal, 2.0, time(8, vec![0.01, 0.005, 0.0025]), Semidiscrete, Flux, first)),
        ("space b flux", study("b", FluxWeighted, 1.0, space(vec![8, 16, 32]), Exact, Flux, SlopeBand::at_least(0.9))),
    ];
    let ok = runs.iter().all(|(_, r)| r.is_ok());
    let detail = runs
        .iter()
        .map(|(name, r)| match r {
            Ok(s) => format!("{name}: {s:.3}"),
            Err(e) => format!("{name}: {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    ensure(ok, detail)
}

fn contracts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut roundtrip: f64 = 0.0;
    for chi in [0.0, 0.25, 0.5, 1.0] {
        let grid = Grid2D::new(1.0, 1.5, 7, 9).unwrap();
        let (_, k) = case_k("b", grid, chi);
        for _ in 0..10 {
            let g = random_flux(grid, &mut rng);
            let back = k.apply_c(&k.apply_k(&g).unwrap()).unwrap();
            let mut d = back.clone();
            d.axpy(-1.0, &g).unwrap();
            roundtrip = roundtrip.max(d.norm() / g.norm());
        }
    }
    let grid = Grid2D::new(1.0, 1.0, 9, 7).unwrap();
    let (_, kc) = case_k("c", grid, 0.5);
    let c = kc.c_diagonal().unwrap();
    let split = TriangularSplit::assemble(&grid).unwrap();
    let mut direct: f64 = 0.0;
    for st in [1e-3, 1.0, 100.0] {
        for which in [Triangle::Lower, Triangle::Upper] {
            let b: Vec<f64> = (0..split.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = solve_triangular_diag(&split, which, &c, st, &b).unwrap();
            direct = direct.max(relative_residual(&split.apply_shifted(which, &c, st, &x), &b));
        }
        let n = 40;
        let m = Tridiagonal {
            sub: vec![-st; n - 1],
            diag: (0..n).map(|i| 1.0 + st * if i == 0 || i == n - 1 { 1.0 } else { 2.0 }).collect(),
            sup: vec![-st; n - 1],
        };
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = m.solve(&b, 0).unwrap();
        direct = direct.max(relative_residual(&m.matvec(&x), &b));
    }
    for kind in [SchemeKind::LodDiagonal, SchemeKind::LodTriangular] {
        for tau in [0.01, 1.0, 100.0] {
            let cfg = SchemeConfig::new(kind, 1.0, tau, tau).unwrap();
            let g = random_flux(grid, &mut rng);
            let phi = random_scalar(grid, &mut rng);
            let (_, rep) = Stepper::new(&kc, cfg).unwrap().step(&State::Flux(g), &phi).unwrap();
            direct = direct.max(rep.residual_norm);
        }
    }
    let (_, kb) = case_k("b", grid, 0.5);
    let mut cg_ok = true;
    let mut cg_worst: f64 = 0.0;
    for (kind, tol) in [(SchemeKind::ScalarWeighted, 1e-10), (SchemeKind::ScalarWeighted, 1e-13), (SchemeKind::FluxWeighted, 1e-10), (SchemeKind::FluxWeighted, 1e-12)] {
        let mut cfg = SchemeConfig::new(kind, 0.5, 1.0, 1.0).unwrap();
        cfg.cg_tol = tol;
        let u0 = random_scalar(grid, &mut rng);
        let phi = random_scalar(grid, &mut rng);
        let state = State::initial(kind, &u0, &kb).unwrap();
        let (_, rep) = Stepper::new(&kb, cfg).unwrap().step(&state, &phi).unwrap();
        cg_ok &= rep.converged && rep.residual_norm <= tol;
        cg_worst = cg_worst.max(rep.residual_norm / tol);
    }
    ensure(
        roundtrip <= 1e-12 && direct <= 1e-12 && cg_ok,
        format!("C(Kg) = g to {roundtrip:.2e}; direct solves residual <= {direct:.2e}; CG residual / tol <= {cg_worst:.2}"),
    )
}

const DETERMINISM_CONFIG: &str = r#"{
  "seed": 3,
  "experiments": [
    {"study": "evolve", "name": "random-mixed", "grid": {"n1": 6}, "coefficients": {"case": "b"},
     "initial": "random", "source": "zero",
     "scheme": {"kind": "flux_weighted", "sigma": 0.5, "tau": 0.5, "t_final": 10.0}},
    {"study": "evolve", "name": "forced-triangular", "grid": {"n1": 6}, "coefficients": {"case": "aniso"},
     "scheme": {"kind": "lod_triangular", "sigma": 0.5, "tau": 0.1, "t_final": 5.0}},
    {"study": "convergence", "name": "time-diagonal", "case": "c", "kind": "lod_diagonal", "sigma": 2.0,
     "refinement": {"time": {"cells": 6, "taus": [0.02, 0.01, 0.005]}}, "reference": "semidiscrete"},
    {"study": "stability", "name": "map", "grid": {"n1": 4}, "coefficients": {"case": "b"},
     "kind": "scalar_weighted", "sigmas": [0.0, 0.5, 1.0], "taus": [0.01, 1.0], "expect_stable": false}
  ]
}"#;

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let run = |sub: &str, workers: &str| -> std::result::Result<(), String> {
        let out = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_fluxlod"))
            .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers])
            .env_remove("FLUXLOD_OUT")
            .env_remove("FLUXLOD_WORKERS")
            .output()
            .map_err(|e| e.to_string())?;
        if status.status.code() != Some(0) {
            return Err(format!("run exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
        }
        Ok(())
    };
    run("first", "1")?;
    run("second", "4")?;
    let files = [
        "random-mixed/steps.csv",
        "forced-triangular/steps.csv",
        "time-diagonal/convergence.csv",
        "map/stability.csv",
    ];
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let mut bytes = 0;
    for f in files {
        let a = read(&dir.path().join("first").join(f))?;
        let b = read(&dir.path().join("second").join(f))?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
        bytes += a.len();
    }
    Ok(format!("{} files, {bytes} bytes identical across two runs (1 and 4 workers)", files.len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("adjointness", adjointness),
        ("operator identity", operator_identity),
        ("scheme equivalence", equivalence),
        ("scalar weighted scheme stability (sigma = 0.5)", || stability_criterion(SchemeKind::ScalarWeighted, 0.5, "b", &[0.01, 1.0, 100.0])),
        ("flux weighted scheme stability in the C norm (sigma = 0.5)", || stability_criterion(SchemeKind::FluxWeighted, 0.5, "b", &[0.01, 1.0, 100.0])),
        ("diagonal LOD stability (sigma = 2)", || stability_criterion(SchemeKind::LodDiagonal, 2.0, "aniso", &[0.01, 1.0, 100.0])),
        ("alternating triangle stability (sigma = 0.5)", || stability_criterion(SchemeKind::LodTriangular, 0.5, "aniso", &[0.01, 1.0, 100.0])),
        ("convergence orders", convergence_orders),
        ("round-trip and residual contracts", contracts),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let result = check();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
        if name.starts_with("diagonal LOD") {
            println!("NOTE  diagonal LOD at sigma = 0.5 (recorded, not asserted): {}", record_lod_diagonal_low_weight());
        }
    }
    println!("{} criteria, {failed} failed", 10);
    if failed > 0 {
        std::process::exit(1);
    }
}
