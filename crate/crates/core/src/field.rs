//! Scalar and flux grid functions with their `h1 h2`-weighted inner products.

use crate::error::{Error, Result};
use crate::grid::{Comp, Grid2D};

/// Grid function on the interior nodes. Boundary values are zero and are
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            values: vec![0.0; grid.scalar_len()],
            grid,
        }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.scalar_len() {
            return Err(Error::DimensionMismatch {
                expected: grid.scalar_len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x1, x2)` on the interior nodes.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid
            .interior()
            .iter()
            .map(|(i1, i2)| {
                let (x1, x2) = grid.node(i1, i2);
                f(x1, x2)
            })
            .collect();
        Self { grid, values }
    }

    /// Discrete delta: one at `(i1, i2)`, zero elsewhere.
    pub fn delta(grid: Grid2D, i1: usize, i2: usize) -> Result<Self> {
        let mut y = Self::zeros(grid);
        let k = grid
            .interior()
            .local(i1, i2)
            .ok_or_else(|| Error::Domain(format!("({i1}, {i2}) is not an interior node")))?;
        y.values[k] = 1.0;
        Ok(y)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at any node of the closed grid; boundary and outside nodes read
    /// as zero.
    #[inline]
    pub fn at(&self, i1: isize, i2: isize) -> f64 {
        self.grid
            .interior()
            .local_signed(i1, i2)
            .map_or(0.0, |k| self.values[k])
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        scalar_inner_product(self, other)
    }

    pub fn norm(&self) -> f64 {
        (self.grid.cell_area() * dot(&self.values, &self.values)).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        same_grid(&self.grid, &other.grid)?;
        axpy(a, &other.values, &mut self.values);
        Ok(())
    }
}

/// Four-component grid vector `(q1+, q1−, q2+, q2−)` stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    grid: Grid2D,
    data: Vec<f64>,
}

impl FluxField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            data: vec![0.0; grid.flux_len()],
            grid,
        }
    }

    pub fn from_values(grid: Grid2D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.flux_len() {
            return Err(Error::DimensionMismatch {
                expected: grid.flux_len(),
                got: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    /// Samples `f(comp, x1, x2)` on each component's half-grid.
    pub fn from_fn(grid: Grid2D, f: impl Fn(Comp, f64, f64) -> f64) -> Self {
        let mut q = Self::zeros(grid);
        for comp in Comp::ALL {
            let range = grid.half_grid(comp);
            for ((i1, i2), v) in range.iter().zip(q.comp_mut(comp)) {
                let (x1, x2) = grid.node(i1, i2);
                *v = f(comp, x1, x2);
            }
        }
        q
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn comp(&self, comp: Comp) -> &[f64] {
        let off = self.grid.flux_offset(comp);
        &self.data[off..off + self.grid.half_grid(comp).len()]
    }

    pub fn comp_mut(&mut self, comp: Comp) -> &mut [f64] {
        let off = self.grid.flux_offset(comp);
        let len = self.grid.half_grid(comp).len();
        &mut self.data[off..off + len]
    }

    /// Component value at `(i1, i2)`, zero outside the component's half-grid.
    #[inline]
    pub fn at(&self, comp: Comp, i1: isize, i2: isize) -> f64 {
        self.grid
            .half_grid(comp)
            .local_signed(i1, i2)
            .map_or(0.0, |k| self.comp(comp)[k])
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        flux_inner_product(self, other)
    }

    pub fn norm(&self) -> f64 {
        (self.grid.cell_area() * dot(&self.data, &self.data)).sqrt()
    }

    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        same_grid(&self.grid, &other.grid)?;
        axpy(a, &other.data, &mut self.data);
        Ok(())
    }
}

pub fn scalar_inner_product(y: &ScalarField, w: &ScalarField) -> Result<f64> {
    same_grid(&y.grid, &w.grid)?;
    Ok(y.grid.cell_area() * dot(&y.values, &w.values))
}

pub fn flux_inner_product(q: &FluxField, g: &FluxField) -> Result<f64> {
    same_grid(&q.grid, &g.grid)?;
    Ok(q.grid.cell_area() * dot(&q.data, &g.data))
}

/// `sqrt((W q, q))` for a self-adjoint weight `W`.
///
/// A quadratic form below `−1e-12 ‖q‖²` is reported as
/// [`Error::NotPositive`]; smaller negative values are roundoff and give zero.
pub fn operator_weighted_norm(q: &FluxField, w: impl Fn(&FluxField) -> FluxField) -> Result<f64> {
    let wq = w(q);
    let form = flux_inner_product(&wq, q)?;
    let scale = flux_inner_product(q, q)?;
    if form < -1e-12 * scale {
        return Err(Error::NotPositive { value: form });
    }
    Ok(form.max(0.0).sqrt())
}

pub(crate) fn same_grid(a: &Grid2D, b: &Grid2D) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
