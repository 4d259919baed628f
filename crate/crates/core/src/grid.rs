//! Uniform rectangular grid and the index sets of its grid functions.
//!
//! Scalars live on the interior nodes `ω = {(i1 h1, i2 h2) : 1 ≤ iα ≤ Nα − 1}`.
//! The flux has four components, one per one-sided difference, each stored on
//! its own half-grid of integer nodes:
//!
//! | component | i1 range      | i2 range      |
//! |-----------|---------------|---------------|
//! | `P1` (1+) | `0 ..= N1−1`  | `1 ..= N2−1`  |
//! | `M1` (1−) | `1 ..= N1`    | `1 ..= N2−1`  |
//! | `P2` (2+) | `1 ..= N1−1`  | `0 ..= N2−1`  |
//! | `M2` (2−) | `1 ..= N1−1`  | `1 ..= N2`    |
//!
//! Within every index set values are ordered lexicographically in `(i2, i1)`,
//! i.e. `i1` runs fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    l1: f64,
    l2: f64,
    n1: usize,
    n2: usize,
    h1: f64,
    h2: f64,
}

impl Grid2D {
    pub fn new(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<Self> {
        if !(l1 > 0.0 && l1.is_finite() && l2 > 0.0 && l2.is_finite()) {
            return Err(Error::Domain(format!(
                "side lengths must be positive and finite, got l1 = {l1}, l2 = {l2}"
            )));
        }
        if n1 < 2 || n2 < 2 {
            return Err(Error::Domain(format!(
                "need at least two cells per direction for an interior node, got N1 = {n1}, N2 = {n2}"
            )));
        }
        Ok(Self {
            l1,
            l2,
            n1,
            n2,
            h1: l1 / n1 as f64,
            h2: l2 / n2 as f64,
        })
    }

    /// Unit square with `n × n` cells.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(1.0, 1.0, n, n)
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }
    pub fn l2(&self) -> f64 {
        self.l2
    }
    pub fn n1(&self) -> usize {
        self.n1
    }
    pub fn n2(&self) -> usize {
        self.n2
    }
    pub fn h1(&self) -> f64 {
        self.h1
    }
    pub fn h2(&self) -> f64 {
        self.h2
    }

    /// Weight `h1 h2` shared by every grid inner product.
    pub fn cell_area(&self) -> f64 {
        self.h1 * self.h2
    }

    /// Largest mesh step, used as the refinement parameter.
    pub fn h_max(&self) -> f64 {
        self.h1.max(self.h2)
    }

    pub fn node(&self, i1: usize, i2: usize) -> (f64, f64) {
        (i1 as f64 * self.h1, i2 as f64 * self.h2)
    }

    pub fn interior(&self) -> IndexRange {
        IndexRange::new(1, self.n1 - 1, 1, self.n2 - 1)
    }

    /// Every node of the closed grid, boundary included.
    pub fn all_nodes(&self) -> IndexRange {
        IndexRange::new(0, self.n1, 0, self.n2)
    }

    pub fn half_grid(&self, comp: Comp) -> IndexRange {
        let (n1, n2) = (self.n1, self.n2);
        match comp {
            Comp::P1 => IndexRange::new(0, n1 - 1, 1, n2 - 1),
            Comp::M1 => IndexRange::new(1, n1, 1, n2 - 1),
            Comp::P2 => IndexRange::new(1, n1 - 1, 0, n2 - 1),
            Comp::M2 => IndexRange::new(1, n1 - 1, 1, n2),
        }
    }

    pub fn scalar_len(&self) -> usize {
        self.interior().len()
    }

    pub fn flux_len(&self) -> usize {
        Comp::ALL.iter().map(|&c| self.half_grid(c).len()).sum()
    }

    /// Offset of a component inside the component-major flux ordering.
    pub fn flux_offset(&self, comp: Comp) -> usize {
        Comp::ALL
            .iter()
            .take_while(|&&c| c != comp)
            .map(|&c| self.half_grid(c).len())
            .sum()
    }
}

/// One of the four one-sided flux components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comp {
    P1,
    M1,
    P2,
    M2,
}

impl Comp {
    pub const ALL: [Comp; 4] = [Comp::P1, Comp::M1, Comp::P2, Comp::M2];

    /// Spatial direction of the difference: 1 or 2.
    pub fn axis(self) -> usize {
        match self {
            Comp::P1 | Comp::M1 => 1,
            Comp::P2 | Comp::M2 => 2,
        }
    }

    pub fn is_forward(self) -> bool {
        matches!(self, Comp::P1 | Comp::P2)
    }

    pub fn label(self) -> &'static str {
        match self {
            Comp::P1 => "1+",
            Comp::M1 => "1-",
            Comp::P2 => "2+",
            Comp::M2 => "2-",
        }
    }
}

/// Inclusive rectangular index block `lo1..=hi1 × lo2..=hi2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexRange {
    pub lo1: usize,
    pub hi1: usize,
    pub lo2: usize,
    pub hi2: usize,
}

impl IndexRange {
    pub fn new(lo1: usize, hi1: usize, lo2: usize, hi2: usize) -> Self {
        Self { lo1, hi1, lo2, hi2 }
    }

    pub fn len1(&self) -> usize {
        self.hi1 + 1 - self.lo1
    }

    pub fn len2(&self) -> usize {
        self.hi2 + 1 - self.lo2
    }

    pub fn len(&self) -> usize {
        self.len1() * self.len2()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i1: usize, i2: usize) -> bool {
        (self.lo1..=self.hi1).contains(&i1) && (self.lo2..=self.hi2).contains(&i2)
    }

    /// Position of `(i1, i2)` in the `(i2, i1)` lexicographic ordering.
    #[inline]
    pub fn local(&self, i1: usize, i2: usize) -> Option<usize> {
        if self.contains(i1, i2) {
            Some((i1 - self.lo1) + (i2 - self.lo2) * self.len1())
        } else {
            None
        }
    }

    /// Same as [`IndexRange::local`] for signed indices, so callers can probe
    /// neighbours such as `i1 − 1` without underflow.
    #[inline]
    pub fn local_signed(&self, i1: isize, i2: isize) -> Option<usize> {
        if i1 < 0 || i2 < 0 {
            None
        } else {
            self.local(i1 as usize, i2 as usize)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.lo2..=self.hi2).flat_map(move |i2| (self.lo1..=self.hi1).map(move |i1| (i1, i2)))
    }
}
