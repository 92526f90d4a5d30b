//! Binary erosion, dilation, opening and closing with world-space ellipsoidal
//! structuring elements. Voxels outside the grid count as background.

use crate::volume::{BinaryMask, Spacing};

/// Tolerance on the normalized-distance test so that radii that are exact
/// multiples of the spacing are not lost to rounding.
const RADIUS_EPS: f64 = 1e-9;

/// A symmetric set of voxel offsets containing the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuringElement {
    pub radius_mm: [f64; 3],
    offsets: Vec<[isize; 3]>,
}

impl StructuringElement {
    /// All offsets `o` with `sum_a (o_a * spacing_a / radius_a)^2 <= 1`. An
    /// axis with zero radius admits only offset 0 along it.
    pub fn ellipsoid(radius_mm: [f64; 3], spacing: Spacing) -> Self {
        let mut reach = [0isize; 3];
        for a in 0..3 {
            let r = radius_mm[a].max(0.0);
            reach[a] = if r > 0.0 {
                (r / spacing[a] * (1.0 + RADIUS_EPS)).floor() as isize
            } else {
                0
            };
        }
        let term = |a: usize, o: isize| {
            if o == 0 {
                0.0
            } else {
                let d = o as f64 * spacing[a] / radius_mm[a];
                d * d
            }
        };
        let mut offsets = Vec::new();
        for k in -reach[2]..=reach[2] {
            for j in -reach[1]..=reach[1] {
                for i in -reach[0]..=reach[0] {
                    if term(0, i) + term(1, j) + term(2, k) <= 1.0 + RADIUS_EPS {
                        offsets.push([i, j, k]);
                    }
                }
            }
        }
        StructuringElement { radius_mm, offsets }
    }

    /// Ball of one world-space radius on an anisotropic grid.
    pub fn ball(radius_mm: f64, spacing: Spacing) -> Self {
        Self::ellipsoid([radius_mm; 3], spacing)
    }

    pub fn offsets(&self) -> &[[isize; 3]] {
        &self.offsets
    }

    /// Largest offset magnitude along each axis.
    pub fn reach(&self) -> [usize; 3] {
        let mut r = [0usize; 3];
        for o in &self.offsets {
            for a in 0..3 {
                r[a] = r[a].max(o[a].unsigned_abs());
            }
        }
        r
    }
}

pub fn dilate(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let grid = *m.grid();
    let mut out = vec![false; grid.len()];
    for idx in m.indices() {
        let at = grid.coords(idx);
        for &o in se.offsets() {
            if let Some(q) = grid.offset_index(at, o) {
                out[q] = true;
            }
        }
    }
    BinaryMask::from_bools(grid, out)
}

pub fn erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let grid = *m.grid();
    let bits = (0..grid.len()).map(|idx| {
        if !m.is_set(idx) {
            return false;
        }
        let at = grid.coords(idx);
        se.offsets()
            .iter()
            .all(|&o| grid.offset_index(at, o).is_some_and(|q| m.is_set(q)))
    });
    BinaryMask::from_bools(grid, bits.collect::<Vec<_>>())
}

/// `dilate(erode(m))`: removes structures smaller than the element.
pub fn morph_open(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(m, se), se)
}

/// `erode(dilate(m))`: fills gaps smaller than the element.
pub fn morph_close(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode(&dilate(m, se), se)
}
