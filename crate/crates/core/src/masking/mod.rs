//! Background removal, patella localization and the peri-patellar inpainting mask.
//!
//! The pipeline is:
//!
//! 1. [`segment_background`]: Otsu threshold, opening, closing and the largest
//!    connected component give the foreground; everything else is zeroed.
//! 2. [`localize_patella`]: among the bone components (labels come from an
//!    external segmenter or phantom ground truth), the most anterior one with a
//!    plausible volume.
//! 3. [`bowl_mask`]: the patella dilated by `offset_mm`, minus the patella
//!    itself, or [`ellipsoid_mask`] when no patella is found.
//! 4. [`apply_mask`]: zero the masked region to get the conditioning image.

pub mod components;
pub mod morphology;
pub mod otsu;

use serde::{Deserialize, Serialize};

pub use components::{label_components, largest_component, Components, Connectivity};
pub use morphology::{dilate, erode, morph_close, morph_open, StructuringElement};
pub use otsu::{otsu_threshold, otsu_threshold_values, Histogram};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Grid, LabelMap, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    /// Dilation distance around the patella in mm.
    pub offset_mm: f64,
    /// Semi-axes of the fallback ellipsoid in mm.
    pub fallback_semi_axes_mm: [f64; 3],
    /// Fallback centre as fractions of the grid extent, `[0, 1]` per axis.
    pub fallback_center: [f64; 3],
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            offset_mm: 30.0,
            fallback_semi_axes_mm: [30.0, 30.0, 13.5],
            fallback_center: [0.5, 0.25, 0.5],
        }
    }
}

impl MaskSpec {
    /// Offset and fallback scaled to the 64 mm field of view of desk phantoms.
    pub fn desk() -> Self {
        MaskSpec {
            offset_mm: 12.0,
            fallback_semi_axes_mm: [20.0, 12.0, 12.0],
            fallback_center: [0.5, 0.35, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.offset_mm.is_finite() && self.offset_mm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "offset_mm must be > 0, got {}",
                self.offset_mm
            )));
        }
        if self.fallback_semi_axes_mm.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "fallback semi-axes must be > 0, got {:?}",
                self.fallback_semi_axes_mm
            )));
        }
        if self.fallback_center.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::InvalidArgument(format!(
                "fallback centre must lie in [0, 1]^3, got {:?}",
                self.fallback_center
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub otsu_bins: usize,
    /// Radius of the opening/closing element in mm.
    pub se_radius_mm: f64,
    pub connectivity: Connectivity,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            otsu_bins: 256,
            se_radius_mm: 2.0,
            connectivity: Connectivity::TwentySix,
        }
    }
}

/// Result of background segmentation.
#[derive(Debug, Clone)]
pub struct Foreground {
    pub mask: BinaryMask,
    /// The input with every background voxel set to exactly 0.
    pub cleaned: Volume,
    pub threshold: f32,
}

pub fn segment_background(v: &Volume, cfg: &BackgroundConfig) -> Result<Foreground> {
    let threshold = otsu_threshold(v, cfg.otsu_bins)?;
    let raw = BinaryMask::threshold(v, threshold);
    let se = StructuringElement::ball(cfg.se_radius_mm, v.spacing());
    let smoothed = morph_close(&morph_open(&raw, &se), &se);
    let mask = largest_component(&smoothed, cfg.connectivity)?;
    let cleaned = Volume::from_parts(
        *v.grid(),
        v.data()
            .iter()
            .zip(mask.data())
            .map(|(&x, &m)| if m != 0 { x } else { 0.0 })
            .collect(),
    );
    Ok(Foreground {
        mask,
        cleaned,
        threshold,
    })
}

/// Plausible patella volume range and the connectivity used to split bones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatellaSearch {
    pub min_volume_mm3: f64,
    pub max_volume_mm3: f64,
    pub connectivity: Connectivity,
}

impl Default for PatellaSearch {
    /// 2 to 100 cm^3, the range for full-size adult knees.
    fn default() -> Self {
        PatellaSearch {
            min_volume_mm3: 2_000.0,
            max_volume_mm3: 100_000.0,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl PatellaSearch {
    /// 0.2 to 20 cm^3, for desk phantoms.
    pub fn desk() -> Self {
        PatellaSearch {
            min_volume_mm3: 200.0,
            max_volume_mm3: 20_000.0,
            ..PatellaSearch::default()
        }
    }
}

/// Picks the bone component whose centroid is most anterior (smallest y)
/// among components with a volume inside the search range. Every non-zero
/// label counts as bone.
pub fn localize_patella(bones: &LabelMap, search: &PatellaSearch) -> Option<BinaryMask> {
    let grid = *bones.grid();
    let fg = bones.foreground();
    let comps = label_components(&fg, search.connectivity);
    let voxel_mm3 = grid.spacing.iter().product::<f64>();

    let mut y_sum = vec![0f64; comps.count()];
    for (idx, &l) in comps.labels.iter().enumerate() {
        if l != 0 {
            y_sum[l as usize - 1] += grid.coords(idx)[1] as f64;
        }
    }
    let mut best: Option<(u32, f64)> = None;
    for (c, &size) in comps.sizes.iter().enumerate() {
        let vol = size as f64 * voxel_mm3;
        if vol < search.min_volume_mm3 || vol > search.max_volume_mm3 {
            continue;
        }
        let centroid_y = y_sum[c] / size as f64;
        if best.is_none_or(|(_, y)| centroid_y < y) {
            best = Some((c as u32 + 1, centroid_y));
        }
    }
    best.map(|(label, _)| comps.mask_of(&fg, label))
}

/// World-space dilation of the patella by `offset_mm`, excluding the patella itself.
pub fn bowl_mask(patella: &BinaryMask, spec: &MaskSpec) -> Result<BinaryMask> {
    spec.validate()?;
    if patella.is_empty() {
        return Err(Error::Degenerate("patella mask is empty".into()));
    }
    let se = StructuringElement::ball(spec.offset_mm, patella.spacing());
    dilate(patella, &se).difference(patella)
}

/// Voxels inside the world-space ellipsoid described by the fallback fields of `spec`.
///
/// The centre sits at `fallback_center * (n - 1)` in voxel coordinates, so 0.5
/// is the exact middle of the grid.
pub fn ellipsoid_mask(grid: Grid, spec: &MaskSpec) -> Result<BinaryMask> {
    spec.validate()?;
    let centre: [f64; 3] = std::array::from_fn(|a| spec.fallback_center[a] * (grid.dims[a] - 1) as f64);
    let axes = spec.fallback_semi_axes_mm;
    for a in 0..3 {
        let reach = axes[a] / grid.spacing[a];
        if centre[a] + reach < 0.0 || centre[a] - reach > (grid.dims[a] - 1) as f64 {
            return Err(Error::InvalidArgument(
                "fallback ellipsoid lies outside the grid".into(),
            ));
        }
    }
    Ok(BinaryMask::from_fn(grid, |i, j, k| {
        let p = [i, j, k];
        (0..3)
            .map(|a| {
                let d = (p[a] as f64 - centre[a]) * grid.spacing[a] / axes[a];
                d * d
            })
            .sum::<f64>()
            <= 1.0 + 1e-9
    }))
}

/// Which mask [`inpainting_mask`] produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Bowl,
    EllipsoidFallback,
}

/// Bowl around the localized patella, or the fallback ellipsoid when none is found.
pub fn inpainting_mask(bones: &LabelMap, spec: &MaskSpec, search: &PatellaSearch) -> Result<(BinaryMask, MaskKind)> {
    match localize_patella(bones, search) {
        Some(patella) => Ok((bowl_mask(&patella, spec)?, MaskKind::Bowl)),
        None => {
            log::warn!("no patella candidate found, using the fallback ellipsoid");
            Ok((ellipsoid_mask(*bones.grid(), spec)?, MaskKind::EllipsoidFallback))
        }
    }
}

/// `v * (1 - m)`: zeroes the masked region, leaves the rest untouched.
pub fn apply_mask(v: &Volume, m: &BinaryMask) -> Result<Volume> {
    v.grid().ensure_same(m.grid(), "apply_mask")?;
    Ok(Volume::from_parts(
        *v.grid(),
        v.data()
            .iter()
            .zip(m.data())
            .map(|(&x, &b)| if b != 0 { 0.0 } else { x })
            .collect(),
    ))
}
