//! Resample to a fixed voxel size, crop/pad to a fixed grid, then clip the
//! intensity tails and rescale to [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Grid, Spacing, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_spacing: Spacing,
    pub target_dims: Dims,
    /// Lower clipping percentile in `[0, 100)`.
    pub clip_low_pct: f64,
    /// Upper clipping percentile in `[0, 100)`.
    pub clip_high_pct: f64,
}

impl Default for PreprocessConfig {
    /// 0.6 x 0.6 x 4.5 mm voxels on a 256 x 256 x 32 grid, 1st/99th percentile clipping.
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: [0.6, 0.6, 4.5],
            target_dims: [256, 256, 32],
            clip_low_pct: 1.0,
            clip_high_pct: 99.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        Grid::new(self.target_dims, self.target_spacing)?;
        let pct_ok = |p: f64| (0.0..100.0).contains(&p);
        if !pct_ok(self.clip_low_pct) || !pct_ok(self.clip_high_pct) {
            return Err(Error::InvalidArgument(format!(
                "clip percentiles must lie in [0, 100), got {} and {}",
                self.clip_low_pct, self.clip_high_pct
            )));
        }
        if self.clip_low_pct >= self.clip_high_pct {
            return Err(Error::InvalidArgument(format!(
                "clip_low_pct {} must be below clip_high_pct {}",
                self.clip_low_pct, self.clip_high_pct
            )));
        }
        Ok(())
    }
}

/// Trilinear resampling onto a grid with `target_spacing`.
///
/// Output dims are `round(n * old / new)` (at least 1). Voxel 0 of both grids
/// sits at the same world position, so output voxel `i` samples the input at
/// fractional index `i * new / old`; positions past the last voxel are clamped.
pub fn resample_trilinear(v: &Volume, target_spacing: Spacing) -> Result<Volume> {
    let target = Grid::new([1, 1, 1], target_spacing)?.spacing;
    let src = v.spacing();
    if src == target {
        return Ok(v.clone());
    }
    let n = v.dims();
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        out_dims[a] = ((n[a] as f64 * src[a] / target[a]).round() as usize).max(1);
    }

    // per-axis (lower index, upper index, weight) tables
    let taps: Vec<Vec<(usize, usize, f32)>> = (0..3)
        .map(|a| {
            (0..out_dims[a])
                .map(|i| {
                    let pos = (i as f64 * target[a] / src[a]).clamp(0.0, (n[a] - 1) as f64);
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(n[a] - 1);
                    (lo, hi, (pos - lo as f64) as f32)
                })
                .collect()
        })
        .collect();

    let lerp = |a: f32, b: f32, w: f32| a + w * (b - a);
    let mut data = Vec::with_capacity(out_dims.iter().product());
    for &(z0, z1, wz) in &taps[2] {
        for &(y0, y1, wy) in &taps[1] {
            for &(x0, x1, wx) in &taps[0] {
                let c00 = lerp(v.get(x0, y0, z0), v.get(x1, y0, z0), wx);
                let c10 = lerp(v.get(x0, y1, z0), v.get(x1, y1, z0), wx);
                let c01 = lerp(v.get(x0, y0, z1), v.get(x1, y0, z1), wx);
                let c11 = lerp(v.get(x0, y1, z1), v.get(x1, y1, z1), wx);
                let c0 = lerp(c00, c10, wy);
                let c1 = lerp(c01, c11, wy);
                data.push(lerp(c0, c1, wz));
            }
        }
    }
    Volume::new(out_dims, target, data)
}

/// Keeps a centred window where the input is larger than `target_dims` and
/// zero-pads symmetrically where it is smaller. Odd remainders go to the
/// high-index side in both cases.
pub fn center_crop_pad(v: &Volume, target_dims: Dims) -> Result<Volume> {
    let out_grid = Grid::new(target_dims, v.spacing())?;
    if v.dims() == target_dims {
        return Ok(v.clone());
    }
    let n = v.dims();
    // out index i maps to in index i + shift[a]
    let mut shift = [0isize; 3];
    for a in 0..3 {
        shift[a] = if n[a] >= target_dims[a] {
            ((n[a] - target_dims[a]) / 2) as isize
        } else {
            -(((target_dims[a] - n[a]) / 2) as isize)
        };
    }
    let mut data = vec![0f32; out_grid.len()];
    for k in 0..target_dims[2] {
        let sk = k as isize + shift[2];
        if sk < 0 || sk >= n[2] as isize {
            continue;
        }
        for j in 0..target_dims[1] {
            let sj = j as isize + shift[1];
            if sj < 0 || sj >= n[1] as isize {
                continue;
            }
            for i in 0..target_dims[0] {
                let si = i as isize + shift[0];
                if si < 0 || si >= n[0] as isize {
                    continue;
                }
                data[out_grid.index(i, j, k)] = v.get(si as usize, sj as usize, sk as usize);
            }
        }
    }
    Ok(Volume::from_parts(out_grid, data))
}

/// Nearest-rank percentile of ascending-sorted data: the value at rank
/// `ceil(p/100 * N)` (1-based), with `p = 0` giving the minimum.
pub fn percentile_nearest_rank(sorted: &[f32], pct: f64) -> f32 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub volume: Volume,
    pub low: f32,
    pub high: f32,
    /// Set when the two percentiles coincide; the volume is then all zeros.
    pub degenerate: bool,
}

/// Clips to the configured percentiles and maps `[low, high]` affinely onto `[0, 1]`.
pub fn clip_normalize(v: &Volume, cfg: &PreprocessConfig) -> Result<Normalized> {
    cfg.validate()?;
    let mut sorted = v.data().to_vec();
    sorted.sort_by(f32::total_cmp);
    let low = percentile_nearest_rank(&sorted, cfg.clip_low_pct);
    let high = percentile_nearest_rank(&sorted, cfg.clip_high_pct);
    if high <= low {
        log::warn!("degenerate intensity range: percentiles coincide at {low}");
        return Ok(Normalized {
            volume: Volume::from_parts(*v.grid(), vec![0.0; v.len()]),
            low,
            high,
            degenerate: true,
        });
    }
    let scale = 1.0 / (high as f64 - low as f64);
    let data = v
        .data()
        .iter()
        .map(|&x| ((x.clamp(low, high) as f64 - low as f64) * scale).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(Normalized {
        volume: Volume::from_parts(*v.grid(), data),
        low,
        high,
        degenerate: false,
    })
}

/// The full chain: resample, crop/pad, clip and normalize.
pub fn preprocess(v: &Volume, cfg: &PreprocessConfig) -> Result<Normalized> {
    cfg.validate()?;
    let resampled = resample_trilinear(v, cfg.target_spacing)?;
    let framed = center_crop_pad(&resampled, cfg.target_dims)?;
    clip_normalize(&framed, cfg)
}
