//! Closed-form solutions `u = e^{−t} sin(πx1/l1) sin(πx2/l2)` with hand-coded
//! derivatives, and the sources they induce for a given tensor.

use std::f64::consts::PI;

use rand::Rng;

use crate::coeff::CoeffField;
use crate::error::{Error, Result};
use crate::field::{FluxField, ScalarField};
use crate::grid::Grid2D;
use crate::operators::KOperator;
use crate::schemes::Source;

/// Built-in coefficient families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    /// `k = I`
    Identity,
    /// `k11 = 1 + x1x2/2`, `k22 = 1 + x1²/4`, `k12 = (1 + x1x2)/4`
    Mixed,
    /// `Mixed` with `k12 = 0`
    Diagonal,
    /// `k11 = 1`, `k22 = 25`, `k12 = 0`
    Anisotropic,
}

impl CaseId {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "a" | "identity" => Ok(CaseId::Identity),
            "b" | "mixed" => Ok(CaseId::Mixed),
            "c" | "diagonal" => Ok(CaseId::Diagonal),
            "aniso" | "anisotropic" => Ok(CaseId::Anisotropic),
            other => Err(Error::UnknownCase(other.to_string())),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CaseId::Identity => "a",
            CaseId::Mixed => "b",
            CaseId::Diagonal => "c",
            CaseId::Anisotropic => "aniso",
        }
    }
}

/// First and second spatial derivatives of the spatial factor of `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub s: f64,
    pub s1: f64,
    pub s2: f64,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    id: CaseId,
    l1: f64,
    l2: f64,
}

/// Unit-square case by id (`a`, `b`, `c`, `aniso`).
pub fn make_manufactured(id: &str) -> Result<ManufacturedCase> {
    Ok(ManufacturedCase::new(CaseId::parse(id)?, 1.0, 1.0))
}

impl ManufacturedCase {
    pub fn new(id: CaseId, l1: f64, l2: f64) -> Self {
        Self { id, l1, l2 }
    }

    pub fn on_grid(id: CaseId, grid: &Grid2D) -> Self {
        Self::new(id, grid.l1(), grid.l2())
    }

    pub fn id(&self) -> CaseId {
        self.id
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    fn time_factor(t: f64) -> f64 {
        (-t).exp()
    }

    pub fn spatial(&self, x1: f64, x2: f64) -> Derivatives {
        let (a, b) = (PI / self.l1, PI / self.l2);
        let (s_1, c_1) = (a * x1).sin_cos();
        let (s_2, c_2) = (b * x2).sin_cos();
        Derivatives {
            s: s_1 * s_2,
            s1: a * c_1 * s_2,
            s2: b * s_1 * c_2,
            s11: -a * a * s_1 * s_2,
            s12: a * b * c_1 * c_2,
            s22: -b * b * s_1 * s_2,
        }
    }

    pub fn u(&self, x1: f64, x2: f64, t: f64) -> f64 {
        Self::time_factor(t) * self.spatial(x1, x2).s
    }

    pub fn du_dt(&self, x1: f64, x2: f64, t: f64) -> f64 {
        -self.u(x1, x2, t)
    }

    /// `(∂u/∂x1, ∂u/∂x2)`.
    pub fn grad(&self, x1: f64, x2: f64, t: f64) -> (f64, f64) {
        let d = self.spatial(x1, x2);
        let e = Self::time_factor(t);
        (e * d.s1, e * d.s2)
    }

    /// `(k11, k12, k22)`.
    pub fn k(&self, x1: f64, x2: f64) -> (f64, f64, f64) {
        match self.id {
            CaseId::Identity => (1.0, 0.0, 1.0),
            CaseId::Mixed => (1.0 + 0.5 * x1 * x2, 0.25 * (1.0 + x1 * x2), 1.0 + 0.25 * x1 * x1),
            CaseId::Diagonal => (1.0 + 0.5 * x1 * x2, 0.0, 1.0 + 0.25 * x1 * x1),
            CaseId::Anisotropic => (1.0, 0.0, 25.0),
        }
    }

    /// `(∂1 k11, ∂1 k12, ∂2 k12, ∂2 k22)`, the derivatives entering the
    /// divergence.
    pub fn dk(&self, x1: f64, x2: f64) -> (f64, f64, f64, f64) {
        match self.id {
            CaseId::Identity | CaseId::Anisotropic => (0.0, 0.0, 0.0, 0.0),
            CaseId::Mixed => (0.5 * x2, 0.25 * x2, 0.25 * x1, 0.0),
            CaseId::Diagonal => (0.5 * x2, 0.0, 0.0, 0.0),
        }
    }

    /// `f = ∂u/∂t − Σ ∂/∂x_α (k_αβ ∂u/∂x_β)`.
    pub fn source(&self, x1: f64, x2: f64, t: f64) -> f64 {
        let d = self.spatial(x1, x2);
        let (k11, k12, k22) = self.k(x1, x2);
        let (d1k11, d1k12, d2k12, d2k22) = self.dk(x1, x2);
        let div = d1k11 * d.s1 + k11 * d.s11 + d1k12 * d.s2 + 2.0 * k12 * d.s12 + d2k12 * d.s1 + d2k22 * d.s2 + k22 * d.s22;
        Self::time_factor(t) * (-d.s - div)
    }

    pub fn coeff_field(&self, grid: Grid2D, chi: f64) -> Result<CoeffField> {
        CoeffField::from_fn(grid, chi, |x1, x2| self.k(x1, x2))
    }

    /// Nodal restriction of `u(·, t)` to the interior nodes.
    pub fn exact(&self, grid: Grid2D, t: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x1, x2| self.u(x1, x2, t))
    }

    pub fn initial(&self, grid: Grid2D) -> ScalarField {
        self.exact(grid, 0.0)
    }

    /// `K` applied to `−∂u/∂x_α` sampled at the half-grid nodes.
    pub fn exact_flux(&self, k: &KOperator, t: f64) -> Result<FluxField> {
        let grid = *k.grid();
        let du = FluxField::from_fn(grid, |comp, x1, x2| {
            let (g1, g2) = self.grad(x1, x2, t);
            if comp.axis() == 1 {
                -g1
            } else {
                -g2
            }
        });
        k.apply_k(&du)
    }

    /// Largest discrepancy between the coded derivatives (of `u` and of
    /// `k`) and central differences at `samples` random points, relative to
    /// the magnitude of the checked quantity.
    pub fn spot_check_derivatives(&self, rng: &mut impl Rng, samples: usize) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut track = |coded: f64, fd: f64| {
            let rel = (coded - fd).abs() / coded.abs().max(1.0);
            worst = worst.max(rel);
        };
        for _ in 0..samples {
            let x1 = rng.gen_range(0.05..0.95) * self.l1;
            let x2 = rng.gen_range(0.05..0.95) * self.l2;
            let t = rng.gen_range(0.0..1.0);
            let d = self.spatial(x1, x2);
            let s = |a: f64, b: f64| self.spatial(a, b).s;
            track(d.s1, (s(x1 + h, x2) - s(x1 - h, x2)) / (2.0 * h));
            track(d.s2, (s(x1, x2 + h) - s(x1, x2 - h)) / (2.0 * h));
            let s1 = |a: f64, b: f64| self.spatial(a, b).s1;
            let s2 = |a: f64, b: f64| self.spatial(a, b).s2;
            track(d.s11, (s1(x1 + h, x2) - s1(x1 - h, x2)) / (2.0 * h));
            track(d.s12, (s1(x1, x2 + h) - s1(x1, x2 - h)) / (2.0 * h));
            track(d.s22, (s2(x1, x2 + h) - s2(x1, x2 - h)) / (2.0 * h));
            track(
                self.du_dt(x1, x2, t),
                (self.u(x1, x2, t + h) - self.u(x1, x2, t - h)) / (2.0 * h),
            );
            let (d1k11, d1k12, d2k12, d2k22) = self.dk(x1, x2);
            let kp1 = self.k(x1 + h, x2);
            let km1 = self.k(x1 - h, x2);
            let kp2 = self.k(x1, x2 + h);
            let km2 = self.k(x1, x2 - h);
            track(d1k11, (kp1.0 - km1.0) / (2.0 * h));
            track(d1k12, (kp1.1 - km1.1) / (2.0 * h));
            track(d2k12, (kp2.1 - km2.1) / (2.0 * h));
            track(d2k22, (kp2.2 - km2.2) / (2.0 * h));
        }
        worst
    }
}

impl Source for ManufacturedCase {
    fn value(&self, x1: f64, x2: f64, t: f64) -> f64 {
        self.source(x1, x2, t)
    }
}
