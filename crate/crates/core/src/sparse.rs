//! Compressed sparse rows for `R = D D*` and its triangular split
//! `R = R1 + R2`, `R1* = R2`.

use crate::error::{Error, Result};
use crate::grid::{Comp, Grid2D};

/// Largest system the assembly accepts.
pub const MAX_ASSEMBLY_UNKNOWNS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; duplicate columns are summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `i` as `(col, value)`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(self.n_rows, rows)
    }
}

/// Sparse `D: H → V` in the global orderings (interior nodes, component-major
/// flux).
pub fn assemble_d(grid: &Grid2D) -> Result<CsrMatrix> {
    let n = grid.flux_len();
    if n > MAX_ASSEMBLY_UNKNOWNS {
        return Err(Error::AssemblyTooLarge {
            unknowns: n,
            limit: MAX_ASSEMBLY_UNKNOWNS,
        });
    }
    let interior = grid.interior();
    let col = |i1: isize, i2: isize| interior.local_signed(i1, i2);
    let mut rows = Vec::with_capacity(n);
    for comp in Comp::ALL {
        let h = if comp.axis() == 1 { grid.h1() } else { grid.h2() };
        for (i1, i2) in grid.half_grid(comp).iter() {
            let (i1, i2) = (i1 as isize, i2 as isize);
            // D_c y = −(y(ahead) − y(behind)) / h
            let (ahead, behind) = match comp {
                Comp::P1 => ((i1 + 1, i2), (i1, i2)),
                Comp::M1 => ((i1, i2), (i1 - 1, i2)),
                Comp::P2 => ((i1, i2 + 1), (i1, i2)),
                Comp::M2 => ((i1, i2), (i1, i2 - 1)),
            };
            let mut row = Vec::with_capacity(2);
            if let Some(j) = col(ahead.0, ahead.1) {
                row.push((j, -1.0 / h));
            }
            if let Some(j) = col(behind.0, behind.1) {
                row.push((j, 1.0 / h));
            }
            rows.push(row);
        }
    }
    Ok(CsrMatrix::from_rows(grid.scalar_len(), rows))
}

/// Assembled `R`, with `R1` = strictly lower part plus half the diagonal and
/// `R2 = R1ᵀ`.
#[derive(Debug, Clone)]
pub struct TriangularSplit {
    r: CsrMatrix,
    r1: CsrMatrix,
    r2: CsrMatrix,
}

/// Which factor of the split a triangular solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

impl TriangularSplit {
    /// Assembles `R = D Dᵀ` by direct enumeration of `D` and splits it.
    pub fn assemble(grid: &Grid2D) -> Result<Self> {
        let d = assemble_d(grid)?;
        let dt = d.transpose();
        let n = d.n_rows();
        let mut rows = vec![Vec::new(); n];
        // R[a, b] = Σ_x D[a, x] D[b, x]
        for x in 0..dt.n_rows() {
            let touching: Vec<_> = dt.row(x).collect();
            for &(a, va) in &touching {
                for &(b, vb) in &touching {
                    rows[a].push((b, va * vb));
                }
            }
        }
        let r = CsrMatrix::from_rows(n, rows);
        let mut lower = vec![Vec::new(); n];
        for (i, row) in lower.iter_mut().enumerate() {
            for (j, v) in r.row(i) {
                if j < i {
                    row.push((j, v));
                } else if j == i {
                    row.push((j, 0.5 * v));
                }
            }
        }
        let r1 = CsrMatrix::from_rows(n, lower);
        let r2 = r1.transpose();
        let split = Self { r, r1, r2 };
        split.check_identity()?;
        Ok(split)
    }

    fn check_identity(&self) -> Result<()> {
        for i in 0..self.r.n_rows() {
            for (j, v) in self.r.row(i) {
                let sum = self.r1.get(i, j) + self.r2.get(i, j);
                if sum != v {
                    return Err(Error::Domain(format!("split identity violated at ({i}, {j}): {sum} vs {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn r(&self) -> &CsrMatrix {
        &self.r
    }

    pub fn r1(&self) -> &CsrMatrix {
        &self.r1
    }

    pub fn r2(&self) -> &CsrMatrix {
        &self.r2
    }

    pub fn dim(&self) -> usize {
        self.r.n_rows()
    }

    pub fn factor(&self, which: Triangle) -> &CsrMatrix {
        match which {
            Triangle::Lower => &self.r1,
            Triangle::Upper => &self.r2,
        }
    }

    /// `(diag(c) + στ R_i) x` for the chosen triangle.
    pub fn apply_shifted(&self, which: Triangle, c_diag: &[f64], sigma_tau: f64, x: &[f64]) -> Vec<f64> {
        let mut out = self.factor(which).matvec(x);
        for ((o, &c), &xi) in out.iter_mut().zip(c_diag).zip(x) {
            *o = c * xi + sigma_tau * *o;
        }
        out
    }
}
