//! Integer displacements and the maps defined over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;

/// Integer shift `χ` in `(row, col)` order. A reference pixel `x` is paired
/// with floating pixel `x + χ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Displacement {
    pub row: isize,
    pub col: isize,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { row: 0, col: 0 };

    pub const fn new(row: isize, col: isize) -> Self {
        Self { row, col }
    }
}

impl std::ops::Neg for Displacement {
    type Output = Displacement;
    fn neg(self) -> Displacement {
        Displacement::new(-self.row, -self.col)
    }
}

impl std::ops::Add for Displacement {
    type Output = Displacement;
    fn add(self, o: Displacement) -> Displacement {
        Displacement::new(self.row + o.row, self.col + o.col)
    }
}

impl std::ops::Sub for Displacement {
    type Output = Displacement;
    fn sub(self, o: Displacement) -> Displacement {
        Displacement::new(self.row - o.row, self.col - o.col)
    }
}

/// Rectangular set of displacements mapped onto cells of a map.
///
/// Cell `(i, j)` holds displacement `origin + (i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DisplacementDomain {
    origin: Displacement,
    extent: GridShape,
}

impl DisplacementDomain {
    pub fn new(origin: Displacement, extent: GridShape) -> Self {
        Self { origin, extent }
    }

    /// Every shift at which a floating grid of shape `floating` overlaps a
    /// reference grid of shape `reference` in at least one cell.
    pub fn full(reference: GridShape, floating: GridShape) -> Self {
        let extent = GridShape::new(
            reference.height() + floating.height() - 1,
            reference.width() + floating.width() - 1,
        )
        .expect("sum of positive sides is positive");
        Self {
            origin: Displacement::new(
                1 - reference.height() as isize,
                1 - reference.width() as isize,
            ),
            extent,
        }
    }

    #[inline]
    pub fn origin(&self) -> Displacement {
        self.origin
    }

    #[inline]
    pub fn extent(&self) -> GridShape {
        self.extent
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.extent.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, chi: Displacement) -> bool {
        self.extent
            .contains(chi.row - self.origin.row, chi.col - self.origin.col)
    }

    #[inline]
    pub fn index(&self, chi: Displacement) -> Option<usize> {
        let r = chi.row - self.origin.row;
        let c = chi.col - self.origin.col;
        self.extent
            .contains(r, c)
            .then(|| self.extent.index(r as usize, c as usize))
    }

    #[inline]
    pub fn shift(&self, index: usize) -> Displacement {
        let w = self.extent.width();
        Displacement::new(
            self.origin.row + (index / w) as isize,
            self.origin.col + (index % w) as isize,
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = Displacement> + '_ {
        (0..self.len()).map(move |i| self.shift(i))
    }
}

/// Non-negative integer count per displacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMap {
    domain: DisplacementDomain,
    counts: Vec<u32>,
}

impl CountMap {
    pub fn new(domain: DisplacementDomain, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != domain.len() {
            return Err(Error::LengthMismatch {
                expected: domain.len(),
                got: counts.len(),
            });
        }
        Ok(Self { domain, counts })
    }

    pub fn zeros(domain: DisplacementDomain) -> Self {
        Self {
            domain,
            counts: vec![0; domain.len()],
        }
    }

    #[inline]
    pub fn domain(&self) -> DisplacementDomain {
        self.domain
    }

    #[inline]
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn counts_mut(&mut self) -> &mut [u32] {
        &mut self.counts
    }

    pub fn at(&self, chi: Displacement) -> Option<u32> {
        self.domain.index(chi).map(|i| self.counts[i])
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}
