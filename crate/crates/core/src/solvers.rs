//! Linear solvers for the implicit parts of the schemes: Thomas elimination
//! on batches of tridiagonal lines, unpreconditioned conjugate gradients for
//! matrix-free SPD operators, and substitution with the triangular factors of
//! `R`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::dot;
use crate::operators::KOperator;
use crate::sparse::{Triangle, TriangularSplit};

/// Default relative residual for conjugate gradients inside time steps.
pub const DEFAULT_CG_TOL: f64 = 1e-10;
/// Residual bound guaranteed by the direct substitutions.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// Relative residual `‖b − A x‖ / ‖b‖` of the returned solution.
    pub residual_norm: f64,
    pub converged: bool,
    /// Conjugate gradients met a direction with `pᵀ A p ≤ 0`.
    pub negative_curvature: bool,
}

impl SolverReport {
    pub fn direct(residual_norm: f64) -> Self {
        Self {
            iterations: 0,
            residual_norm,
            converged: true,
            negative_curvature: false,
        }
    }
}

/// Linear map on flat coefficient vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

/// Tridiagonal matrix; `sub[i]` multiplies `x[i]` in row `i + 1`, `sup[i]`
/// multiplies `x[i + 1]` in row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn identity(n: usize) -> Self {
        Self {
            sub: vec![0.0; n.saturating_sub(1)],
            diag: vec![1.0; n],
            sup: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.sup[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Thomas elimination without pivoting; `line` only labels errors.
    pub fn solve(&self, rhs: &[f64], line: usize) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n || self.sub.len() + 1 != n.max(1) || self.sup.len() + 1 != n.max(1) {
            return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut pivot = self.diag[0];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SingularLine { line, row: 0 });
        }
        if n > 1 {
            c[0] = self.sup[0] / pivot;
        }
        d[0] = rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.sub[i - 1] * c[i - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::SingularLine { line, row: i });
            }
            if i + 1 < n {
                c[i] = self.sup[i] / pivot;
            }
            d[i] = (rhs[i] - self.sub[i - 1] * d[i - 1]) / pivot;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Solves independent tridiagonal lines in parallel. Each line is eliminated
/// sequentially, so results do not depend on the schedule.
pub fn solve_tridiagonal_batch(lines: &[(Tridiagonal, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
    lines
        .par_iter()
        .enumerate()
        .map(|(i, (m, rhs))| m.solve(rhs, i))
        .collect()
}

/// Conjugate gradients for a self-adjoint positive definite operator.
///
/// Stops when the true relative residual `‖b − A x‖ / ‖b‖` is at most `tol`.
/// When the recursive residual claims convergence but the true one does not
/// agree, the iteration restarts from the current iterate. Non-convergence
/// and negative curvature are reported, not raised.
pub fn solve_spd(
    op: &dyn LinearOperator,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, SolverReport) {
    let n = op.dim();
    assert_eq!(rhs.len(), n, "right-hand side has wrong dimension");
    let b_norm = dot(rhs, rhs).sqrt();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut report = SolverReport::default();
    if b_norm == 0.0 && x0.is_none() {
        report.converged = true;
        return (x, report);
    }
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let true_residual = |x: &[f64]| -> Vec<f64> {
        let ax = op.apply(x);
        rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
    };

    let mut r = true_residual(&x);
    loop {
        let mut rr = dot(&r, &r);
        if rr.sqrt() <= tol * scale {
            report.residual_norm = rr.sqrt() / scale;
            report.converged = true;
            return (x, report);
        }
        let mut p = r.clone();
        loop {
            if report.iterations >= max_iter {
                report.residual_norm = dot(&r, &r).sqrt() / scale;
                return (x, report);
            }
            let ap = op.apply(&p);
            let curvature = dot(&p, &ap);
            report.iterations += 1;
            if curvature <= 0.0 || !curvature.is_finite() {
                report.negative_curvature = true;
                report.residual_norm = dot(&r, &r).sqrt() / scale;
                return (x, report);
            }
            let alpha = rr / curvature;
            for (xi, pi) in x.iter_mut().zip(&p) {
                *xi += alpha * pi;
            }
            for (ri, api) in r.iter_mut().zip(&ap) {
                *ri -= alpha * api;
            }
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= tol * scale {
                break;
            }
            let beta = rr_new / rr;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
            rr = rr_new;
        }
        // Confirm against the true residual before accepting.
        r = true_residual(&x);
        let true_rr = dot(&r, &r);
        if true_rr.sqrt() <= tol * scale {
            report.residual_norm = true_rr.sqrt() / scale;
            report.converged = true;
            return (x, report);
        }
    }
}

/// Solves `(diag(C) + στ R_i) z = rhs` by forward (`Lower`) or backward
/// (`Upper`) substitution.
pub fn solve_triangular_diag(split: &TriangularSplit, which: Triangle, c_diag: &[f64], sigma_tau: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = split.dim();
    if c_diag.len() != n || rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rhs.len().min(c_diag.len()) });
    }
    let m = split.factor(which);
    let mut z = vec![0.0; n];
    let mut step = |i: usize| -> Result<()> {
        let mut acc = rhs[i];
        let mut diag = c_diag[i];
        for (j, v) in m.row(i) {
            if j == i {
                diag += sigma_tau * v;
            } else {
                acc -= sigma_tau * v * z[j];
            }
        }
        if diag == 0.0 || !diag.is_finite() {
            return Err(Error::SingularLine { line: 0, row: i });
        }
        z[i] = acc / diag;
        Ok(())
    };
    match which {
        Triangle::Lower => (0..n).try_for_each(&mut step)?,
        Triangle::Upper => (0..n).rev().try_for_each(&mut step)?,
    }
    Ok(z)
}

/// Triangular solve with `C` taken from a coefficient operator; `C` must be
/// diagonal.
pub fn solve_triangular(split: &TriangularSplit, which: Triangle, k: &KOperator, sigma_tau: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let c_diag = k.c_diagonal()?;
    solve_triangular_diag(split, which, &c_diag, sigma_tau, rhs)
}

/// Relative residual `‖b − A x‖ / ‖b‖`, zero when both sides vanish.
pub fn relative_residual(ax: &[f64], b: &[f64]) -> f64 {
    let num: f64 = ax.iter().zip(b).map(|(a, bb)| (a - bb) * (a - bb)).sum::<f64>().sqrt();
    let den = dot(b, b).sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Largest operator a dense solver or probe assembles.
pub const DENSE_MAX_UNKNOWNS: usize = 1200;

/// Dense matrix of an operator, one column per unit vector.
pub fn assemble_dense(op: &dyn LinearOperator) -> Result<DMatrix<f64>> {
    let n = op.dim();
    if n > DENSE_MAX_UNKNOWNS {
        return Err(Error::AssemblyTooLarge {
            unknowns: n,
            limit: DENSE_MAX_UNKNOWNS,
        });
    }
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        for (i, v) in op.apply(&e).into_iter().enumerate() {
            m[(i, j)] = v;
        }
        e[j] = 0.0;
    }
    Ok(m)
}

/// Cholesky factorization of a small SPD operator.
#[derive(Debug, Clone)]
pub struct DenseSpd {
    chol: Cholesky<f64, Dyn>,
}

impl DenseSpd {
    pub fn factor(op: &dyn LinearOperator) -> Result<Self> {
        let m = assemble_dense(op)?;
        let m = 0.5 * (&m + m.transpose());
        let chol = Cholesky::new(m).ok_or(Error::NotPositive { value: f64::NAN })?;
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).as_slice().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::CoeffField;
    use crate::field::ScalarField;
    use crate::grid::Grid2D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tridiagonal_identity() {
        let rhs = vec![1.0, -2.0, 3.5];
        assert_eq!(Tridiagonal::identity(3).solve(&rhs, 0).unwrap(), rhs);
    }

    #[test]
    fn tridiagonal_two_by_two() {
        let m = Tridiagonal {
            sub: vec![-1.0],
            diag: vec![2.0, 2.0],
            sup: vec![-1.0],
        };
        let x = m.solve(&[1.0, 1.0], 0).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tridiagonal_single_row_and_zero_pivot() {
        let m = Tridiagonal {
            sub: vec![],
            diag: vec![4.0],
            sup: vec![],
        };
        assert_eq!(m.solve(&[2.0], 0).unwrap(), vec![0.5]);
        let singular = Tridiagonal {
            sub: vec![1.0],
            diag: vec![1.0, 1.0],
            sup: vec![1.0],
        };
        assert!(matches!(singular.solve(&[1.0, 1.0], 3), Err(Error::SingularLine { line: 3, row: 1 })));
    }

    #[test]
    fn tridiagonal_batch_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lines: Vec<_> = (0..16)
            .map(|_| {
                let n = rng.gen_range(2..40);
                let sub: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let diag = (0..n)
                    .map(|i| {
                        let l = if i > 0 { sub[i - 1].abs() } else { 0.0 };
                        let u = if i + 1 < n { sub[i].abs() } else { 0.0 };
                        l + u + rng.gen_range(0.01..2.0)
                    })
                    .collect();
                let rhs = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
                (Tridiagonal { sup: sub.clone(), sub, diag }, rhs)
            })
            .collect();
        let sols = solve_tridiagonal_batch(&lines).unwrap();
        for ((m, rhs), x) in lines.iter().zip(&sols) {
            assert!(relative_residual(&m.matvec(x), rhs) <= DIRECT_RESIDUAL_TOL);
        }
        // Same input, same bits.
        assert_eq!(sols, solve_tridiagonal_batch(&lines).unwrap());
    }

    #[test]
    fn cg_identity_one_iteration() {
        let op = FnOperator::new(4, |x: &[f64]| x.to_vec());
        let b = vec![1.0, 2.0, -3.0, 0.5];
        let (x, rep) = solve_spd(&op, &b, None, 1e-12, 10);
        assert_eq!(x, b);
        assert!(rep.converged && rep.iterations == 1);
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let op = FnOperator::new(3, |x: &[f64]| x.iter().map(|v| 2.0 * v).collect());
        let (x, rep) = solve_spd(&op, &[0.0; 3], None, 1e-12, 10);
        assert_eq!(x, vec![0.0; 3]);
        assert!(rep.converged && rep.iterations == 0);
    }

    fn dense_a(k: &KOperator) -> DMatrix<f64> {
        let grid = *k.grid();
        let n = grid.scalar_len();
        DMatrix::from_fn(n, n, |i, j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            k.apply_a(&ScalarField::from_values(grid, e).unwrap()).unwrap().values()[i]
        })
    }

    #[test]
    fn cg_on_a_matches_dense_direct_solve() {
        let grid = Grid2D::unit_square(4).unwrap();
        let k = KOperator::new(CoeffField::constant(grid, 0.5, 1.0, 0.0, 1.0).unwrap()).unwrap();
        let rhs = ScalarField::delta(grid, 2, 2).unwrap();
        let op = FnOperator::new(grid.scalar_len(), |x: &[f64]| {
            k.apply_a(&ScalarField::from_values(grid, x.to_vec()).unwrap()).unwrap().into_values()
        });
        let (x, rep) = solve_spd(&op, rhs.values(), None, 1e-12, 100);
        assert!(rep.converged && rep.residual_norm <= 1e-12);
        let direct = dense_a(&k).cholesky().unwrap().solve(&DMatrix::from_column_slice(9, 1, rhs.values()));
        for (a, b) in x.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_negative_curvature() {
        let op = FnOperator::new(2, |x: &[f64]| vec![x[0], -x[1]]);
        let (_, rep) = solve_spd(&op, &[0.0, 1.0], None, 1e-12, 10);
        assert!(rep.negative_curvature && !rep.converged);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let op = FnOperator::new(3, |x: &[f64]| vec![x[0], 10.0 * x[1], 100.0 * x[2]]);
        let (_, rep) = solve_spd(&op, &[1.0, 1.0, 1.0], None, 1e-14, 1);
        assert!(!rep.converged && rep.iterations == 1);
    }

    #[test]
    fn cg_iterations_grow_at_most_linearly() {
        let mut its = Vec::new();
        for n in [8, 16, 32] {
            let grid = Grid2D::unit_square(n).unwrap();
            let k = KOperator::new(CoeffField::constant(grid, 0.5, 1.0, 0.0, 1.0).unwrap()).unwrap();
            let op = FnOperator::new(grid.scalar_len(), |x: &[f64]| {
                k.apply_a(&ScalarField::from_values(grid, x.to_vec()).unwrap()).unwrap().into_values()
            });
            let b = ScalarField::from_fn(grid, |x1, x2| x1 * (1.0 - x2) + 0.3);
            let (_, rep) = solve_spd(&op, b.values(), None, 1e-10, 10_000);
            assert!(rep.converged);
            its.push(rep.iterations as f64);
        }
        assert!(its[1] / its[0] <= 2.5 && its[2] / its[1] <= 2.5, "{its:?}");
    }

    #[test]
    fn triangular_degenerate_and_residual() {
        let grid = Grid2D::new(1.0, 1.0, 3, 3).unwrap();
        let split = TriangularSplit::assemble(&grid).unwrap();
        let k = KOperator::new(CoeffField::constant(grid, 0.5, 1.0, 0.0, 25.0).unwrap()).unwrap();
        let c = k.c_diagonal().unwrap();
        let rhs: Vec<f64> = (0..split.dim()).map(|i| (i as f64).sin()).collect();
        let z = solve_triangular(&split, Triangle::Lower, &k, 0.0, &rhs).unwrap();
        for ((zi, ci), bi) in z.iter().zip(&c).zip(&rhs) {
            assert!((zi - bi / ci).abs() < 1e-15);
        }
        for which in [Triangle::Lower, Triangle::Upper] {
            for st in [1e-3, 0.7, 50.0] {
                let z = solve_triangular(&split, which, &k, st, &rhs).unwrap();
                let back = split.apply_shifted(which, &c, st, &z);
                assert!(relative_residual(&back, &rhs) <= DIRECT_RESIDUAL_TOL);
            }
        }
    }

    #[test]
    fn triangular_requires_diagonal_c() {
        let grid = Grid2D::new(1.0, 1.0, 3, 3).unwrap();
        let split = TriangularSplit::assemble(&grid).unwrap();
        let k = KOperator::new(CoeffField::constant(grid, 0.5, 1.0, 0.2, 1.0).unwrap()).unwrap();
        let rhs = vec![1.0; split.dim()];
        assert!(matches!(solve_triangular(&split, Triangle::Upper, &k, 1.0, &rhs), Err(Error::NonDiagonalC)));
    }

    #[test]
    fn factored_solve_matches_dense_product() {
        // (C + στR1) C⁻¹ (C + στR2) x = b through the two substitutions.
        let grid = Grid2D::new(1.0, 1.0, 3, 3).unwrap();
        let split = TriangularSplit::assemble(&grid).unwrap();
        let k = KOperator::new(CoeffField::constant(grid, 0.5, 2.0, 0.0, 0.5).unwrap()).unwrap();
        let c = k.c_diagonal().unwrap();
        let n = split.dim();
        let st = 0.3;
        let dense = |m: &crate::sparse::CsrMatrix| DMatrix::from_fn(n, n, |i, j| m.get(i, j));
        let cm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(c.clone()));
        let cinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, c.iter().map(|v| 1.0 / v)));
        let op = (&cm + dense(split.r1()) * st) * cinv * (&cm + dense(split.r2()) * st);
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).cos()).collect();
        let z1 = solve_triangular(&split, Triangle::Lower, &k, st, &b).unwrap();
        let z2: Vec<f64> = z1.iter().zip(&c).map(|(z, ci)| z * ci).collect();
        let x = solve_triangular(&split, Triangle::Upper, &k, st, &z2).unwrap();
        let direct = op.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for (a, d) in x.iter().zip(direct.iter()) {
            assert!((a - d).abs() < 1e-10 * (1.0 + d.abs()));
        }
    }
}
