//! Nodal samples of the symmetric diffusion tensor and the mixing weight χ.

use crate::error::{Error, Result};
use crate::grid::Grid2D;

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffField {
    grid: Grid2D,
    k11: Vec<f64>,
    k12: Vec<f64>,
    k22: Vec<f64>,
    chi: f64,
}

impl CoeffField {
    /// Samples `k(x1, x2) = (k11, k12, k22)` on every node of the closed grid.
    pub fn from_fn(grid: Grid2D, chi: f64, k: impl Fn(f64, f64) -> (f64, f64, f64)) -> Result<Self> {
        let n = (grid.n1() + 1) * (grid.n2() + 1);
        let (mut k11, mut k12, mut k22) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for (i1, i2) in grid.all_nodes().iter() {
            let (x1, x2) = grid.node(i1, i2);
            let (a, c, b) = k(x1, x2);
            k11.push(a);
            k12.push(c);
            k22.push(b);
        }
        Self::from_tables(grid, chi, k11, k12, k22)
    }

    pub fn constant(grid: Grid2D, chi: f64, k11: f64, k12: f64, k22: f64) -> Result<Self> {
        Self::from_fn(grid, chi, |_, _| (k11, k12, k22))
    }

    /// Tables are indexed `i1 + i2 (N1 + 1)` over all `(N1 + 1)(N2 + 1)` nodes.
    pub fn from_tables(grid: Grid2D, chi: f64, k11: Vec<f64>, k12: Vec<f64>, k22: Vec<f64>) -> Result<Self> {
        let n = (grid.n1() + 1) * (grid.n2() + 1);
        for t in [&k11, &k12, &k22] {
            if t.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: t.len() });
            }
        }
        if !chi.is_finite() {
            return Err(Error::Domain(format!("chi must be finite, got {chi}")));
        }
        let field = Self { grid, k11, k12, k22, chi };
        for (i1, i2) in grid.all_nodes().iter() {
            let (a, c, b) = field.at(i1, i2);
            let finite = a.is_finite() && b.is_finite() && c.is_finite();
            if !(finite && a > 0.0 && b > 0.0 && a * b - c * c > 0.0) {
                return Err(Error::NotElliptic { i1, i2, k11: a, k12: c, k22: b });
            }
        }
        Ok(field)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn with_chi(&self, chi: f64) -> Result<Self> {
        Self::from_tables(self.grid, chi, self.k11.clone(), self.k12.clone(), self.k22.clone())
    }

    #[inline]
    fn idx(&self, i1: usize, i2: usize) -> usize {
        i1 + i2 * (self.grid.n1() + 1)
    }

    /// `(k11, k12, k22)` at node `(i1, i2)`.
    #[inline]
    pub fn at(&self, i1: usize, i2: usize) -> (f64, f64, f64) {
        let k = self.idx(i1, i2);
        (self.k11[k], self.k12[k], self.k22[k])
    }

    #[inline]
    pub fn k11(&self, i1: usize, i2: usize) -> f64 {
        self.k11[self.idx(i1, i2)]
    }

    #[inline]
    pub fn k12(&self, i1: usize, i2: usize) -> f64 {
        self.k12[self.idx(i1, i2)]
    }

    #[inline]
    pub fn k22(&self, i1: usize, i2: usize) -> f64 {
        self.k22[self.idx(i1, i2)]
    }

    pub fn has_mixed_terms(&self) -> bool {
        self.k12.iter().any(|&c| c != 0.0)
    }

    /// Smallest eigenvalue of the nodal 2×2 tensors over the whole grid.
    pub fn k_lower(&self) -> f64 {
        self.eigen_bounds().0
    }

    /// Largest eigenvalue of the nodal 2×2 tensors over the whole grid.
    pub fn k_upper(&self) -> f64 {
        self.eigen_bounds().1
    }

    /// Bounds of `C = K^{-1}`: `(1 / k_upper, 1 / k_lower)`.
    pub fn c_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.eigen_bounds();
        (1.0 / hi, 1.0 / lo)
    }

    fn eigen_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ((&a, &c), &b) in self.k11.iter().zip(&self.k12).zip(&self.k22) {
            let (l0, l1) = sym2_eigenvalues(a, c, b);
            lo = lo.min(l0);
            hi = hi.max(l1);
        }
        (lo, hi)
    }
}

/// Eigenvalues `(min, max)` of `[[a, c], [c, b]]`.
#[inline]
pub(crate) fn sym2_eigenvalues(a: f64, c: f64, b: f64) -> (f64, f64) {
    let mean = 0.5 * (a + b);
    let rad = (0.25 * (a - b) * (a - b) + c * c).sqrt();
    (mean - rad, mean + rad)
}
