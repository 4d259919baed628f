//! Discrete gradient `D`, divergence `D*`, the coefficient operator `K` and its
//! inverse `C`, the χ-weighted mixed-derivative stencil, and the composites
//! `A = D* K D`, `R = D D*` and `Q = diag(R)`.
//!
//! `D` is a pure one-sided difference: `D_α^+ y = −y_{x_α}` on the `α+`
//! half-grid and `D_α^- y = −y_{x̄_α}` on the `α−` half-grid. Its adjoint in
//! the `h1 h2`-weighted products is `(D_α^+)* q = q_{x̄_α}`,
//! `(D_α^-)* q = q_{x_α}`.
//!
//! `K` acts index-by-index. At an interior node it couples the four flux
//! components through the symmetric block
//!
//! ```text
//!       [ k11    0      χ k12     (1−χ) k12 ]
//!   ½ · [ 0      k11    (1−χ) k12  χ k12    ]
//!       [ χ k12  (1−χ) k12  k22    0        ]
//!       [ (1−χ) k12  χ k12  0      k22      ]
//! ```
//!
//! in the order `(1+, 1−, 2+, 2−)`, with the coefficients sampled at that
//! node. On the edges of the half-grids only one component is present and
//! the block reduces to `½ k_αα`. With this choice `D* K D` coincides with
//! the χ-combination of the two basic mixed-derivative stencils.

use nalgebra::Matrix4;

use crate::coeff::{sym2_eigenvalues, CoeffField};
use crate::error::{Error, Result};
use crate::field::{same_grid, FluxField, ScalarField};
use crate::grid::{Comp, Grid2D};

/// Values of `D_c y` on the half-grid of `c`, in local order.
pub fn d_component(y: &ScalarField, comp: Comp) -> Vec<f64> {
    let grid = y.grid();
    let (h1, h2) = (grid.h1(), grid.h2());
    grid.half_grid(comp)
        .iter()
        .map(|(i1, i2)| {
            let (i1, i2) = (i1 as isize, i2 as isize);
            match comp {
                Comp::P1 => -(y.at(i1 + 1, i2) - y.at(i1, i2)) / h1,
                Comp::M1 => -(y.at(i1, i2) - y.at(i1 - 1, i2)) / h1,
                Comp::P2 => -(y.at(i1, i2 + 1) - y.at(i1, i2)) / h2,
                Comp::M2 => -(y.at(i1, i2) - y.at(i1, i2 - 1)) / h2,
            }
        })
        .collect()
}

/// Adds `(D_c)* q` to `out`, where `q` holds the values of component `c`.
pub fn add_dstar_component(grid: &Grid2D, comp: Comp, q: &[f64], out: &mut [f64]) {
    let range = grid.half_grid(comp);
    let (h1, h2) = (grid.h1(), grid.h2());
    let at = |i1: usize, i2: usize| q[range.local(i1, i2).expect("interior stencil stays inside half-grid")];
    for ((i1, i2), o) in grid.interior().iter().zip(out.iter_mut()) {
        *o += match comp {
            Comp::P1 => (at(i1, i2) - at(i1 - 1, i2)) / h1,
            Comp::M1 => (at(i1 + 1, i2) - at(i1, i2)) / h1,
            Comp::P2 => (at(i1, i2) - at(i1, i2 - 1)) / h2,
            Comp::M2 => (at(i1, i2 + 1) - at(i1, i2)) / h2,
        };
    }
}

pub fn apply_d(y: &ScalarField) -> FluxField {
    let grid = *y.grid();
    let mut q = FluxField::zeros(grid);
    for comp in Comp::ALL {
        q.comp_mut(comp).copy_from_slice(&d_component(y, comp));
    }
    q
}

pub fn apply_dstar(g: &FluxField) -> ScalarField {
    let grid = *g.grid();
    let mut out = vec![0.0; grid.scalar_len()];
    for comp in Comp::ALL {
        add_dstar_component(&grid, comp, g.comp(comp), &mut out);
    }
    ScalarField::from_values(grid, out).expect("length matches grid")
}

/// `R g = D (D* g)`.
pub fn apply_r(g: &FluxField) -> FluxField {
    apply_d(&apply_dstar(g))
}

/// Diagonal part of `R`: each component is mapped by `D_c (D_c)*` alone.
pub fn apply_q(g: &FluxField) -> FluxField {
    let grid = *g.grid();
    let mut out = FluxField::zeros(grid);
    for comp in Comp::ALL {
        let mut s = vec![0.0; grid.scalar_len()];
        add_dstar_component(&grid, comp, g.comp(comp), &mut s);
        let s = ScalarField::from_values(grid, s).expect("length matches grid");
        out.comp_mut(comp).copy_from_slice(&d_component(&s, comp));
    }
    out
}

/// Flux partners of a component inside the `K` block, with the χ-dependent
/// weight of the coupling.
fn partners(comp: Comp, chi: f64) -> [(Comp, f64); 2] {
    match comp {
        Comp::P1 => [(Comp::P2, chi), (Comp::M2, 1.0 - chi)],
        Comp::M1 => [(Comp::P2, 1.0 - chi), (Comp::M2, chi)],
        Comp::P2 => [(Comp::P1, chi), (Comp::M1, 1.0 - chi)],
        Comp::M2 => [(Comp::P1, 1.0 - chi), (Comp::M1, chi)],
    }
}

fn comp_slot(comp: Comp) -> usize {
    match comp {
        Comp::P1 => 0,
        Comp::M1 => 1,
        Comp::P2 => 2,
        Comp::M2 => 3,
    }
}

/// Dense 4×4 block of `K` at an interior node, order `(1+, 1−, 2+, 2−)`.
pub fn k_block(k11: f64, k12: f64, k22: f64, chi: f64) -> Matrix4<f64> {
    let (a, b) = (k11, k22);
    let s = chi * k12;
    let t = (1.0 - chi) * k12;
    0.5 * Matrix4::new(
        a, 0.0, s, t, //
        0.0, a, t, s, //
        s, t, b, 0.0, //
        t, s, 0.0, b,
    )
}

/// Smallest eigenvalue of the interior `K` block.
///
/// In the basis `(1+ ± 1−)/√2`, `(2+ ± 2−)/√2` the block splits into two
/// 2×2 blocks `½ [[k11, μ k12], [μ k12, k22]]` with `μ ∈ {1, 2χ − 1}`.
pub fn k_block_min_eigenvalue(k11: f64, k12: f64, k22: f64, chi: f64) -> f64 {
    let mu = 2.0 * chi - 1.0;
    let (l_a, _) = sym2_eigenvalues(k11, k12, k22);
    let (l_b, _) = sym2_eigenvalues(k11, mu * k12, k22);
    0.5 * l_a.min(l_b)
}

/// Coefficient operator `K: V → V` together with its exact inverse `C`.
#[derive(Debug, Clone)]
pub struct KOperator {
    coeff: CoeffField,
    /// Inverse blocks on the interior nodes, `(i2, i1)` lexicographic.
    c_blocks: Vec<Matrix4<f64>>,
}

impl KOperator {
    /// Builds `K` and checks positive definiteness of every nodal block.
    pub fn new(coeff: CoeffField) -> Result<Self> {
        let grid = *coeff.grid();
        let chi = coeff.chi();
        let mut c_blocks = Vec::with_capacity(grid.scalar_len());
        for (i1, i2) in grid.interior().iter() {
            let (a, c, b) = coeff.at(i1, i2);
            let block = k_block(a, c, b, chi);
            let scale = 0.5 * a.max(b);
            if k_block_min_eigenvalue(a, c, b, chi) <= 1e-14 * scale {
                return Err(Error::BlockNotSpd { i1, i2, chi });
            }
            let inv = block
                .cholesky()
                .ok_or(Error::BlockNotSpd { i1, i2, chi })?
                .inverse();
            c_blocks.push(inv);
        }
        Ok(Self { coeff, c_blocks })
    }

    pub fn grid(&self) -> &Grid2D {
        self.coeff.grid()
    }

    pub fn coeff(&self) -> &CoeffField {
        &self.coeff
    }

    fn diag_coeff(&self, comp: Comp, i1: usize, i2: usize) -> f64 {
        if comp.axis() == 1 {
            self.coeff.k11(i1, i2)
        } else {
            self.coeff.k22(i1, i2)
        }
    }

    pub fn apply_k(&self, g: &FluxField) -> Result<FluxField> {
        same_grid(self.grid(), g.grid())?;
        let grid = *g.grid();
        let chi = self.coeff.chi();
        let mut out = FluxField::zeros(grid);
        for comp in Comp::ALL {
            let range = grid.half_grid(comp);
            let own = g.comp(comp);
            let pairs = partners(comp, chi);
            let dst = out.comp_mut(comp);
            for (((i1, i2), o), &v) in range.iter().zip(dst.iter_mut()).zip(own) {
                let k12 = self.coeff.k12(i1, i2);
                let mut coupled = 0.0;
                if k12 != 0.0 {
                    for (p, w) in pairs {
                        coupled += w * g.at(p, i1 as isize, i2 as isize);
                    }
                }
                *o = 0.5 * (self.diag_coeff(comp, i1, i2) * v + k12 * coupled);
            }
        }
        Ok(out)
    }

    /// `C g = K^{-1} g` by exact nodal block inversion.
    pub fn apply_c(&self, g: &FluxField) -> Result<FluxField> {
        same_grid(self.grid(), g.grid())?;
        let grid = *g.grid();
        let interior = grid.interior();
        let mut out = FluxField::zeros(grid);
        for comp in Comp::ALL {
            let range = grid.half_grid(comp);
            let row = comp_slot(comp);
            let own = g.comp(comp);
            let dst = out.comp_mut(comp);
            for (((i1, i2), o), &v) in range.iter().zip(dst.iter_mut()).zip(own) {
                *o = match interior.local(i1, i2) {
                    Some(node) => {
                        let inv = &self.c_blocks[node];
                        let (s1, s2) = (i1 as isize, i2 as isize);
                        Comp::ALL
                            .iter()
                            .map(|&p| inv[(row, comp_slot(p))] * g.at(p, s1, s2))
                            .sum()
                    }
                    None => v / (0.5 * self.diag_coeff(comp, i1, i2)),
                };
            }
        }
        Ok(out)
    }

    /// Diagonal of `C` in the global flux ordering. Only defined without
    /// mixed coefficients, when `C` is diagonal.
    pub fn c_diagonal(&self) -> Result<Vec<f64>> {
        if self.coeff.has_mixed_terms() {
            return Err(Error::NonDiagonalC);
        }
        let grid = *self.grid();
        let mut diag = Vec::with_capacity(grid.flux_len());
        for comp in Comp::ALL {
            for (i1, i2) in grid.half_grid(comp).iter() {
                diag.push(2.0 / self.diag_coeff(comp, i1, i2));
            }
        }
        Ok(diag)
    }

    /// `A y = D* K D y`.
    pub fn apply_a(&self, y: &ScalarField) -> Result<ScalarField> {
        same_grid(self.grid(), y.grid())?;
        Ok(apply_dstar(&self.apply_k(&apply_d(y))?))
    }
}

/// `L11 y + L22 y + χ (L⁽¹⁾12 + L⁽¹⁾21) y + (1−χ)(L⁽²⁾12 + L⁽²⁾21) y`,
/// evaluated directly from the three-point and mixed stencils with zero
/// Dirichlet ghosts.
pub fn apply_l_stencil(y: &ScalarField, coeff: &CoeffField) -> Result<ScalarField> {
    same_grid(y.grid(), coeff.grid())?;
    let grid = *y.grid();
    let (h1, h2) = (grid.h1(), grid.h2());
    let chi = coeff.chi();
    let v = |i: usize, j: usize| y.at(i as isize, j as isize);
    // One-sided differences at a node; `i − 1` and `j − 1` are only formed
    // for interior indices, so they never underflow.
    let f1 = |i: usize, j: usize| (v(i + 1, j) - v(i, j)) / h1;
    let b1 = |i: usize, j: usize| (v(i, j) - y.at(i as isize - 1, j as isize)) / h1;
    let f2 = |i: usize, j: usize| (v(i, j + 1) - v(i, j)) / h2;
    let b2 = |i: usize, j: usize| (v(i, j) - y.at(i as isize, j as isize - 1)) / h2;
    let k11 = |i, j| coeff.k11(i, j);
    let k12 = |i, j| coeff.k12(i, j);
    let k22 = |i, j| coeff.k22(i, j);

    let values = grid
        .interior()
        .iter()
        .map(|(i, j)| {
            let l11 = -0.5 * (k11(i, j) * f1(i, j) - k11(i - 1, j) * f1(i - 1, j)) / h1
                - 0.5 * (k11(i + 1, j) * b1(i + 1, j) - k11(i, j) * b1(i, j)) / h1;
            let l22 = -0.5 * (k22(i, j) * f2(i, j) - k22(i, j - 1) * f2(i, j - 1)) / h2
                - 0.5 * (k22(i, j + 1) * b2(i, j + 1) - k22(i, j) * b2(i, j)) / h2;
            let l1_12 = -0.5 * (k12(i, j) * f1(i, j) - k12(i, j - 1) * f1(i, j - 1)) / h2
                - 0.5 * (k12(i, j + 1) * b1(i, j + 1) - k12(i, j) * b1(i, j)) / h2;
            let l1_21 = -0.5 * (k12(i, j) * f2(i, j) - k12(i - 1, j) * f2(i - 1, j)) / h1
                - 0.5 * (k12(i + 1, j) * b2(i + 1, j) - k12(i, j) * b2(i, j)) / h1;
            let l2_12 = -0.5 * (k12(i, j + 1) * f1(i, j + 1) - k12(i, j) * f1(i, j)) / h2
                - 0.5 * (k12(i, j) * b1(i, j) - k12(i, j - 1) * b1(i, j - 1)) / h2;
            let l2_21 = -0.5 * (k12(i + 1, j) * f2(i + 1, j) - k12(i, j) * f2(i, j)) / h1
                - 0.5 * (k12(i, j) * b2(i, j) - k12(i - 1, j) * b2(i - 1, j)) / h1;
            l11 + l22 + chi * (l1_12 + l1_21) + (1.0 - chi) * (l2_12 + l2_21)
        })
        .collect();
    ScalarField::from_values(grid, values)
}
