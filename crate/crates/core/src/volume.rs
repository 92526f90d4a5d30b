//! Voxel grids and the scalar, binary and label volumes defined on them.
//!
//! All volumes store their samples in a flat vector, x fastest and z slowest:
//! `index = i + nx * (j + ny * k)`. Spacing is in millimetres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along (x, y, z).
pub type Dims = [usize; 3];

/// Voxel size in millimetres along (x, y, z).
pub type Spacing = [f64; 3];

/// Shape and voxel size shared by every volume type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: Dims,
    pub spacing: Spacing,
}

impl Grid {
    pub fn new(dims: Dims, spacing: Spacing) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Grid { dims, spacing })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Linear index of `(i, j, k) + offset`, or `None` when it leaves the grid.
    #[inline]
    pub fn offset_index(&self, at: [usize; 3], offset: [isize; 3]) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let v = at[a] as isize + offset[a];
            if v < 0 || v >= self.dims[a] as isize {
                return None;
            }
            c[a] = v as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    pub fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GridMismatch(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        if self
            .spacing
            .iter()
            .zip(other.spacing.iter())
            .any(|(a, b)| (a - b).abs() > 1e-6 * a.abs().max(b.abs()))
        {
            return Err(Error::GridMismatch(format!(
                "{what}: spacing {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }
}

/// A 3D scalar field with anisotropic voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f32>,
}

impl Volume {
    /// Builds a volume, rejecting wrong lengths, bad spacing and non-finite samples.
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        let grid = Grid::new(dims, spacing)?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                grid.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "non-finite value {} at linear index {pos}",
                data[pos]
            )));
        }
        Ok(Volume { grid, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        let grid = Grid::new(dims, spacing)?;
        Volume::new(dims, spacing, vec![value; grid.len()])
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Volume::filled(dims, spacing, 0.0)
    }

    /// Evaluates `f(i, j, k)` at every voxel.
    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let grid = Grid::new(dims, spacing)?;
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(dims, spacing, data)
    }

    /// Wraps data already known to satisfy the invariants.
    pub(crate) fn from_parts(grid: Grid, data: Vec<f32>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Volume { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.grid.dims
    }

    #[inline]
    pub fn spacing(&self) -> Spacing {
        self.grid.spacing
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.index(i, j, k)]
    }

    /// Sets one voxel. Non-finite values are rejected.
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidVolume(format!("non-finite value {value}")));
        }
        let idx = self.grid.index(i, j, k);
        self.data[idx] = value;
        Ok(())
    }

    /// Applies `f` to every sample; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume> {
        Volume::new(self.dims(), self.spacing(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Extracts the axial (xy) plane at `k` as a row-major `ny x nx` vector.
    pub fn axial_slice(&self, k: usize) -> Vec<f32> {
        let n = self.dims()[0] * self.dims()[1];
        self.data[k * n..(k + 1) * n].to_vec()
    }
}

/// A {0, 1} volume. Mask voxels set to 1 are "inside".
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        let grid = Grid::new(dims, spacing)?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "mask length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidVolume(format!("mask value {v} is not 0 or 1")));
        }
        Ok(BinaryMask { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        BinaryMask {
            data: vec![0; grid.len()],
            grid,
        }
    }

    pub fn full(grid: Grid) -> Self {
        BinaryMask {
            data: vec![1; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f(i, j, k) as u8);
                }
            }
        }
        BinaryMask { grid, data }
    }

    pub(crate) fn from_bools(grid: Grid, bits: impl IntoIterator<Item = bool>) -> Self {
        let data: Vec<u8> = bits.into_iter().map(u8::from).collect();
        debug_assert_eq!(data.len(), grid.len());
        BinaryMask { grid, data }
    }

    /// Interprets a volume holding exactly 0.0 and 1.0 as a mask.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        let mut data = Vec::with_capacity(v.len());
        for &x in v.data() {
            if x == 0.0 {
                data.push(0);
            } else if x == 1.0 {
                data.push(1);
            } else {
                return Err(Error::InvalidVolume(format!("mask value {x} is not 0 or 1")));
            }
        }
        Ok(BinaryMask { grid: *v.grid(), data })
    }

    /// Voxels where `v >= threshold`.
    pub fn threshold(v: &Volume, threshold: f32) -> Self {
        BinaryMask::from_bools(*v.grid(), v.data().iter().map(|&x| x >= threshold))
    }

    pub fn to_volume(&self) -> Volume {
        Volume::from_parts(self.grid, self.data.iter().map(|&b| b as f32).collect())
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.grid.dims
    }

    #[inline]
    pub fn spacing(&self) -> Spacing {
        self.grid.spacing
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.grid.index(i, j, k)] != 0
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.data[index] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    /// `self AND NOT other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.grid.ensure_same(&other.grid, "mask difference")?;
        Ok(BinaryMask::from_bools(
            self.grid,
            self.data.iter().zip(&other.data).map(|(&a, &b)| a != 0 && b == 0),
        ))
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.grid.ensure_same(&other.grid, "mask intersection")?;
        Ok(BinaryMask::from_bools(
            self.grid,
            self.data.iter().zip(&other.data).map(|(&a, &b)| a != 0 && b != 0),
        ))
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.grid.ensure_same(&other.grid, "mask union")?;
        Ok(BinaryMask::from_bools(
            self.grid,
            self.data.iter().zip(&other.data).map(|(&a, &b)| a != 0 || b != 0),
        ))
    }

    /// True when every voxel set here is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Linear indices of the set voxels, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i)
    }
}

/// Small non-negative integer labels (0 = background), e.g. bone segmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    grid: Grid,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        let grid = Grid::new(dims, spacing)?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "label length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(LabelMap { grid, data })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.grid.dims
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Voxels carrying exactly `label`.
    pub fn select(&self, label: u8) -> BinaryMask {
        BinaryMask::from_bools(self.grid, self.data.iter().map(|&l| l == label))
    }

    /// Voxels carrying any non-zero label.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::from_bools(self.grid, self.data.iter().map(|&l| l != 0))
    }
}

impl From<&BinaryMask> for LabelMap {
    fn from(m: &BinaryMask) -> Self {
        LabelMap {
            grid: m.grid,
            data: m.data.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_volumes() {
        assert!(Volume::new([2, 2, 2], [1.0; 3], vec![0.0; 7]).is_err());
        assert!(Volume::new([2, 2, 2], [1.0, 0.0, 1.0], vec![0.0; 8]).is_err());
        let mut data = vec![0.0; 8];
        data[3] = f32::NAN;
        assert!(Volume::new([2, 2, 2], [1.0; 3], data).is_err());
        assert!(Volume::new([0, 2, 2], [1.0; 3], vec![]).is_err());
    }

    #[test]
    fn index_is_x_fastest() {
        let g = Grid::new([3, 4, 5], [1.0; 3]).unwrap();
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(BinaryMask::new([1, 1, 2], [1.0; 3], vec![0, 2]).is_err());
        let v = Volume::new([1, 1, 2], [1.0; 3], vec![0.0, 0.5]).unwrap();
        assert!(BinaryMask::from_volume(&v).is_err());
    }

    #[test]
    fn mask_set_algebra() {
        let g = Grid::new([4, 1, 1], [1.0; 3]).unwrap();
        let a = BinaryMask::new(g.dims, g.spacing, vec![1, 1, 0, 0]).unwrap();
        let b = BinaryMask::new(g.dims, g.spacing, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(a.difference(&b).unwrap().data(), &[1, 0, 0, 0]);
        assert_eq!(a.intersection(&b).unwrap().data(), &[0, 1, 0, 0]);
        assert_eq!(a.union(&b).unwrap().data(), &[1, 1, 1, 0]);
        assert!(a.intersection(&b).unwrap().is_subset_of(&a));
    }
}
