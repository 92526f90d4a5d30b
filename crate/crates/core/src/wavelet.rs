//! Single-level orthonormal 3D Haar transform.
//!
//! Each 2x2x2 block of the input becomes one coefficient in each of eight
//! half-resolution bands. The 1D step maps a pair `(a, b)` to
//! `((a + b) / sqrt 2, (a - b) / sqrt 2)` and is applied along x, then y,
//! then z. Band names list the z, y and x filters in that order, so `llh` is
//! low-pass in z and y and high-pass in x.
//!
//! Coefficients are stored band-major: band 0 (`lll`) first, each band x
//! fastest. This is also the channel layout the denoiser consumes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, SampleType, Sidecar};
use crate::volume::{Dims, Grid, Spacing, Volume};

/// Band names in storage order. Bit 2 of the index is the z filter, bit 1 the
/// y filter and bit 0 the x filter (1 = high-pass).
pub const BAND_NAMES: [&str; 8] = ["lll", "llh", "lhl", "lhh", "hll", "hlh", "hhl", "hhh"];

/// Bands penalized by the sparsity term of the training loss.
pub const SPARSE_BANDS: [usize; 4] = [7, 6, 5, 3];

/// Index of a band from its three-letter name.
pub fn band_index(name: &str) -> Option<usize> {
    BAND_NAMES.iter().position(|&n| n == name)
}

/// The eight subbands of one transform level.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    band_dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl WaveletCoeffs {
    /// `spacing` is the voxel size of the source volume.
    pub fn new(band_dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        Grid::new(band_dims, spacing)?;
        let n = band_dims.iter().product::<usize>();
        if data.len() != 8 * n {
            return Err(Error::Shape(format!(
                "expected 8 bands of {band_dims:?} ({} values), got {}",
                8 * n,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite coefficient at index {pos}")));
        }
        Ok(WaveletCoeffs {
            band_dims,
            spacing,
            data,
        })
    }

    pub fn zeros(band_dims: Dims, spacing: Spacing) -> Result<Self> {
        let n = band_dims.iter().product::<usize>();
        WaveletCoeffs::new(band_dims, spacing, vec![0.0; 8 * n])
    }

    /// Coefficient set with the band layout of `self` and new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        WaveletCoeffs::new(self.band_dims, self.spacing, data)
    }

    pub fn band_dims(&self) -> Dims {
        self.band_dims
    }

    /// Dimensions of the volume these coefficients reconstruct to.
    pub fn source_dims(&self) -> Dims {
        self.band_dims.map(|n| 2 * n)
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    /// Voxels per band.
    pub fn band_len(&self) -> usize {
        self.band_dims.iter().product()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.band_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.band_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Sum of squared coefficients, accumulated in f64.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&c| c as f64 * c as f64).sum()
    }

    pub fn max_abs_diff(&self, other: &WaveletCoeffs) -> Result<f32> {
        self.ensure_same_layout(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn ensure_same_layout(&self, other: &WaveletCoeffs) -> Result<()> {
        if self.band_dims != other.band_dims {
            return Err(Error::Shape(format!(
                "band dims {:?} vs {:?}",
                self.band_dims, other.band_dims
            )));
        }
        Ok(())
    }
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[inline]
fn butterfly(a: f64, b: f64) -> (f64, f64) {
    ((a + b) * INV_SQRT2, (a - b) * INV_SQRT2)
}

/// Forward transform of one block indexed `[z][y][x]`, in place. On return
/// `block[band]` holds the coefficient of each band.
fn forward_block(v: &mut [f64; 8]) {
    // x pairs differ in bit 0, y in bit 1, z in bit 2; each pass writes
    // low to the 0 slot and high to the 1 slot of its bit
    for bit in [1usize, 2, 4] {
        for i in 0..8 {
            if i & bit == 0 {
                let (lo, hi) = butterfly(v[i], v[i | bit]);
                v[i] = lo;
                v[i | bit] = hi;
            }
        }
    }
}

/// Exact inverse of [`forward_block`]: the butterfly is its own inverse, so
/// the passes run in reverse order.
fn inverse_block(v: &mut [f64; 8]) {
    for bit in [4usize, 2, 1] {
        for i in 0..8 {
            if i & bit == 0 {
                let (a, b) = butterfly(v[i], v[i | bit]);
                v[i] = a;
                v[i | bit] = b;
            }
        }
    }
}

pub fn dwt3(v: &Volume) -> Result<WaveletCoeffs> {
    let [nx, ny, nz] = v.dims();
    if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
        return Err(Error::Shape(format!(
            "wavelet transform needs even dims, got {:?}",
            v.dims()
        )));
    }
    let band_dims = [nx / 2, ny / 2, nz / 2];
    let n = band_dims.iter().product::<usize>();
    let src = v.data();
    let mut out = vec![0f32; 8 * n];
    let mut block = [0f64; 8];
    for k in 0..band_dims[2] {
        for j in 0..band_dims[1] {
            for i in 0..band_dims[0] {
                for (slot, b) in block.iter_mut().enumerate() {
                    let (dx, dy, dz) = (slot & 1, (slot >> 1) & 1, slot >> 2);
                    *b = src[(2 * i + dx) + nx * ((2 * j + dy) + ny * (2 * k + dz))] as f64;
                }
                forward_block(&mut block);
                let at = i + band_dims[0] * (j + band_dims[1] * k);
                for (band, &c) in block.iter().enumerate() {
                    out[band * n + at] = c as f32;
                }
            }
        }
    }
    Ok(WaveletCoeffs {
        band_dims,
        spacing: v.spacing(),
        data: out,
    })
}

pub fn idwt3(c: &WaveletCoeffs) -> Result<Volume> {
    let bd = c.band_dims;
    let [nx, ny, nz] = c.source_dims();
    let n = c.band_len();
    let mut out = vec![0f32; nx * ny * nz];
    let mut block = [0f64; 8];
    for k in 0..bd[2] {
        for j in 0..bd[1] {
            for i in 0..bd[0] {
                let at = i + bd[0] * (j + bd[1] * k);
                for (band, b) in block.iter_mut().enumerate() {
                    *b = c.data[band * n + at] as f64;
                }
                inverse_block(&mut block);
                for (slot, &x) in block.iter().enumerate() {
                    let (dx, dy, dz) = (slot & 1, (slot >> 1) & 1, slot >> 2);
                    out[(2 * i + dx) + nx * ((2 * j + dy) + ny * (2 * k + dz))] = x as f32;
                }
            }
        }
    }
    Volume::new([nx, ny, nz], c.spacing, out)
}

/// Writes all eight bands to one 8-channel raw file. The sidecar lists the
/// band order and the band dims; `spacing_mm` is the source spacing.
pub fn save_coeffs(c: &WaveletCoeffs, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut sidecar = Sidecar::new(&Grid::new(c.band_dims, c.spacing)?, SampleType::F32Le);
    sidecar.bands = Some(BAND_NAMES.iter().map(|s| s.to_string()).collect());
    io::write_payload(path, &sidecar, &io::f32s_to_le_bytes(&c.data))
}

/// Loads coefficients written by [`save_coeffs`]. The bands may be listed in
/// any order; they are rearranged into storage order.
pub fn load_coeffs(path: impl AsRef<Path>) -> Result<WaveletCoeffs> {
    let path = path.as_ref();
    let (sidecar, bytes) = io::read_payload(path)?;
    let names = sidecar
        .bands
        .as_ref()
        .ok_or_else(|| Error::format(path, "sidecar has no band list"))?;
    if sidecar.dtype != SampleType::F32Le {
        return Err(Error::format(path, "coefficients must be f32le"));
    }
    let mut order = Vec::with_capacity(8);
    for name in names {
        let b = band_index(name).ok_or_else(|| Error::format(path, format!("unknown band {name:?}")))?;
        if order.contains(&b) {
            return Err(Error::format(path, format!("band {name:?} listed twice")));
        }
        order.push(b);
    }
    if order.len() != 8 {
        return Err(Error::format(path, format!("expected 8 bands, found {}", order.len())));
    }
    let values = io::le_bytes_to_f32s(&bytes);
    let n = sidecar.dims.iter().product::<usize>();
    let mut data = vec![0f32; 8 * n];
    for (slot, &b) in order.iter().enumerate() {
        data[b * n..(b + 1) * n].copy_from_slice(&values[slot * n..(slot + 1) * n]);
    }
    WaveletCoeffs::new(sidecar.dims, sidecar.spacing_mm, data).map_err(|e| Error::format(path, e.to_string()))
}
