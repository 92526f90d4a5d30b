//! Synthetic knee phantoms with an analytic trochlear groove, and automated
//! sulcus-angle / groove-depth measurement on axial slices.
//!
//! Geometry lives in the axial (x, y) plane: x runs across the knee, y runs
//! from anterior (small y) to posterior. The anterior femur surface is a V
//! whose two facets meet at the trough; beyond the facet peaks the condyles
//! round off posteriorly. For a sulcus angle `SA` and groove depth `d`, the
//! peaks sit `d * tan(SA / 2)` either side of the trough. The groove has full
//! depth within `trochlea_half_length_mm` of slice `nz / 2` and flattens
//! linearly (at fixed facet width) over `trochlea_taper_mm` beyond that, so
//! slices far from the patella show a flat shaft. The patella is an ellipsoid
//! just in front of the peak line, centred on slice `nz / 2`.
//!
//! Landmark coordinates are in mm from the grid origin (voxel index times
//! spacing). The half with smaller x is called lateral.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{save_labels, save_raw};
use crate::masking::{label_components, otsu_threshold_values, Connectivity};
use crate::volume::{BinaryMask, Dims, Grid, LabelMap, Spacing, Volume};

pub const FEMUR_LABEL: u8 = 1;
pub const PATELLA_LABEL: u8 = 2;

const OTSU_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub sulcus_angle_deg: f64,
    pub groove_depth_mm: f64,
    /// Half of the femur width along x.
    pub condyle_half_width_mm: f64,
    /// How far the condyle edges fall behind the peak line.
    pub condyle_drop_mm: f64,
    /// y of the facet peaks.
    pub peak_y_mm: f64,
    /// y of the posterior end of the femur.
    pub femur_back_y_mm: f64,
    /// Distance along z from the centre slice over which the groove has full depth.
    pub trochlea_half_length_mm: f64,
    /// Length along z over which the groove then flattens out.
    pub trochlea_taper_mm: f64,
    /// Gap between the peak line and the back of the patella.
    pub patella_gap_mm: f64,
    pub patella_semi_axes_mm: [f64; 3],
    pub bone_intensity: f64,
    pub tissue_intensity: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub dims: Dims,
    pub spacing: Spacing,
}

impl Default for PhantomSpec {
    /// A 32x32x8 desk-scale phantom with a healthy groove.
    fn default() -> Self {
        PhantomSpec {
            sulcus_angle_deg: 145.0,
            groove_depth_mm: 5.2,
            condyle_half_width_mm: 22.0,
            condyle_drop_mm: 6.0,
            peak_y_mm: 25.0,
            femur_back_y_mm: 56.0,
            trochlea_half_length_mm: 8.0,
            trochlea_taper_mm: 8.0,
            patella_gap_mm: 3.0,
            patella_semi_axes_mm: [10.0, 5.0, 10.0],
            bone_intensity: 0.8,
            tissue_intensity: 0.25,
            noise_std: 0.0,
            seed: 0,
            dims: [32, 32, 8],
            spacing: [2.0, 2.0, 4.0],
        }
    }
}

impl PhantomSpec {
    pub fn with_groove(sulcus_angle_deg: f64, groove_depth_mm: f64) -> Self {
        PhantomSpec {
            sulcus_angle_deg,
            groove_depth_mm,
            ..PhantomSpec::default()
        }
    }

    /// The same field of view sampled at `spacing` in-plane.
    pub fn resampled_in_plane(mut self, spacing_mm: f64) -> Self {
        for a in 0..2 {
            let fov = self.dims[a] as f64 * self.spacing[a];
            self.dims[a] = (fov / spacing_mm).round() as usize;
            self.spacing[a] = spacing_mm;
        }
        self
    }

    /// Distance along x from the trough to each facet peak.
    pub fn facet_half_width_mm(&self) -> f64 {
        self.groove_depth_mm * (self.sulcus_angle_deg.to_radians() / 2.0).tan()
    }

    pub fn trough_y_mm(&self) -> f64 {
        self.peak_y_mm + self.groove_depth_mm
    }

    /// x of the trough: the centre of column `nx / 2`.
    pub fn centre_x_mm(&self) -> f64 {
        (self.dims[0] / 2) as f64 * self.spacing[0]
    }

    /// z of the patella centre: slice `nz / 2`.
    pub fn centre_z_mm(&self) -> f64 {
        (self.dims[2] / 2) as f64 * self.spacing[2]
    }

    pub fn validate(&self) -> Result<()> {
        let geo = |msg: String| Err(Error::Geometry(msg));
        if !(self.sulcus_angle_deg > 90.0 && self.sulcus_angle_deg < 180.0) {
            return geo(format!(
                "sulcus angle must lie in (90, 180) degrees, got {}",
                self.sulcus_angle_deg
            ));
        }
        if !(self.groove_depth_mm.is_finite() && self.groove_depth_mm >= 0.0) {
            return geo(format!("groove depth must be >= 0, got {}", self.groove_depth_mm));
        }
        Grid::new(self.dims, self.spacing)?;
        if self.dims[0] < 8 || self.dims[1] < 8 {
            return Err(Error::InvalidArgument(format!(
                "in-plane dims must be >= 8, got {:?}",
                self.dims
            )));
        }
        let positive = [
            self.condyle_half_width_mm,
            self.condyle_drop_mm,
            self.patella_gap_mm,
            self.patella_semi_axes_mm[0],
            self.patella_semi_axes_mm[1],
            self.patella_semi_axes_mm[2],
        ];
        if positive.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return geo("condyle, gap and patella sizes must be positive".into());
        }
        if !(self.trochlea_half_length_mm >= 0.0 && self.trochlea_taper_mm > 0.0) {
            return geo("trochlea half-length must be >= 0 and taper > 0".into());
        }
        let [hx, hy, _] = self.spacing;
        let a = self.facet_half_width_mm();
        let w = self.condyle_half_width_mm;
        if a + 2.0 * hx > w {
            return geo(format!(
                "a {:.1} mm deep groove at {:.1} degrees needs facets {a:.2} mm wide, \
                 leaving less than two columns of condyle within the {w} mm half-width",
                self.groove_depth_mm, self.sulcus_angle_deg
            ));
        }
        let xc = self.centre_x_mm();
        let x_max = (self.dims[0] - 1) as f64 * hx;
        if xc - w < 0.0 || xc + w > x_max {
            return geo(format!("femur half-width {w} mm does not fit the grid"));
        }
        if xc - self.patella_semi_axes_mm[0] < 0.0 || xc + self.patella_semi_axes_mm[0] > x_max {
            return geo("patella does not fit the grid along x".into());
        }
        if self.patella_gap_mm < hy {
            return geo(format!(
                "patella gap {} mm is below one voxel ({hy} mm)",
                self.patella_gap_mm
            ));
        }
        let patella_front = self.peak_y_mm - self.patella_gap_mm - 2.0 * self.patella_semi_axes_mm[1];
        if patella_front < hy {
            return geo("patella sticks out of the anterior edge of the grid".into());
        }
        let y_max = (self.dims[1] - 1) as f64 * hy;
        let deepest = self.peak_y_mm + self.groove_depth_mm.max(self.condyle_drop_mm);
        if self.femur_back_y_mm < deepest + 2.0 * hy || self.femur_back_y_mm > y_max {
            return geo(format!(
                "femur back at {} mm must lie behind the anterior surface and inside the grid",
                self.femur_back_y_mm
            ));
        }
        if !(0.0 <= self.tissue_intensity && self.tissue_intensity < self.bone_intensity && self.bone_intensity <= 1.0)
        {
            return Err(Error::InvalidArgument(
                "need 0 <= tissue_intensity < bone_intensity <= 1".into(),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Fraction of the full groove depth present at `z`.
    pub fn groove_scale(&self, z: f64) -> f64 {
        let dz = (z - self.centre_z_mm()).abs() - self.trochlea_half_length_mm;
        (1.0 - dz.max(0.0) / self.trochlea_taper_mm).max(0.0)
    }

    /// y of the anterior femur surface at distance `u` from the trough along
    /// x on the centre slice, or `None` outside the femur.
    pub fn surface_y_mm(&self, u: f64) -> Option<f64> {
        self.surface_y_scaled(u, 1.0)
    }

    fn surface_y_scaled(&self, u: f64, scale: f64) -> Option<f64> {
        let u = u.abs();
        let a = self.facet_half_width_mm();
        let w = self.condyle_half_width_mm;
        if u > w {
            None
        } else if u < a {
            Some(self.peak_y_mm + scale * self.groove_depth_mm * (1.0 - u / a))
        } else {
            let s = (u - a) / (w - a);
            Some(self.peak_y_mm + self.condyle_drop_mm * s * s)
        }
    }

    fn in_patella(&self, x: f64, y: f64, z: f64) -> bool {
        let [ax, ay, az] = self.patella_semi_axes_mm;
        let cy = self.peak_y_mm - self.patella_gap_mm - ay;
        let d = [
            (x - self.centre_x_mm()) / ax,
            (y - cy) / ay,
            (z - self.centre_z_mm()) / az,
        ];
        d.iter().map(|v| v * v).sum::<f64>() <= 1.0
    }

    /// Soft-tissue envelope: an elliptic cylinder around both bones.
    /// Returns the normalized radius, inside when `<= 1`.
    fn envelope_radius(&self, x: f64, y: f64) -> f64 {
        let front = self.peak_y_mm - self.patella_gap_mm - 2.0 * self.patella_semi_axes_mm[1] - 6.0;
        let back = self.femur_back_y_mm + 6.0;
        let cy = 0.5 * (front + back);
        let ry = 0.5 * (back - front);
        let rx = self.condyle_half_width_mm + 8.0;
        let (dx, dy) = ((x - self.centre_x_mm()) / rx, (y - cy) / ry);
        (dx * dx + dy * dy).sqrt()
    }

    /// Landmarks of the analytic groove on slice `nz / 2`; the flat limit
    /// when the depth is zero.
    pub fn ground_truth(&self) -> Result<GrooveMeasurement> {
        self.validate()?;
        if self.groove_depth_mm == 0.0 {
            return Ok(GrooveMeasurement::flat(self.dims[2] / 2));
        }
        let a = self.facet_half_width_mm();
        let xc = self.centre_x_mm();
        GrooveMeasurement::from_landmarks(
            self.dims[2] / 2,
            [xc - a, self.peak_y_mm],
            [xc + a, self.peak_y_mm],
            [xc, self.trough_y_mm()],
        )
    }
}

/// A generated phantom with its bone labels and analytic groove.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub volume: Volume,
    /// [`FEMUR_LABEL`], [`PATELLA_LABEL`], 0 elsewhere.
    pub labels: LabelMap,
    pub truth: GrooveMeasurement,
}

impl Phantom {
    pub fn patella(&self) -> BinaryMask {
        self.labels.select(PATELLA_LABEL)
    }
}

/// Renders `spec`. The femur is partial-volumed along y from the analytic
/// surface so that sub-voxel groove geometry survives sampling; the patella
/// is supersampled 3x3x3. Noise is added inside the body only and the
/// result is clamped to `[0, 1]`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let grid = Grid::new(spec.dims, spec.spacing)?;
    let [hx, hy, hz] = spec.spacing;
    let xc = spec.centre_x_mm();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(grid.len());
    let mut labels = Vec::with_capacity(grid.len());
    for k in 0..spec.dims[2] {
        for j in 0..spec.dims[1] {
            for i in 0..spec.dims[0] {
                let (x, y, z) = (i as f64 * hx, j as f64 * hy, k as f64 * hz);
                let femur = match spec.surface_y_scaled(x - xc, spec.groove_scale(z)) {
                    Some(top) => {
                        let lo = (y - 0.5 * hy).max(top);
                        let hi = (y + 0.5 * hy).min(spec.femur_back_y_mm);
                        ((hi - lo) / hy).clamp(0.0, 1.0)
                    }
                    None => 0.0,
                };
                let mut inside = 0;
                for s in 0..27 {
                    let o = |q: usize| (q as f64 - 1.0) / 3.0;
                    if spec.in_patella(x + o(s % 3) * hx, y + o(s / 3 % 3) * hy, z + o(s / 9) * hz) {
                        inside += 1;
                    }
                }
                let patella = inside as f64 / 27.0;
                let r = spec.envelope_radius(x, y);
                let base = if r <= 1.0 {
                    spec.tissue_intensity * (1.0 - 0.1 * r * r)
                } else {
                    0.0
                };
                let bone = (femur + patella).min(1.0);
                let mut value = base + (spec.bone_intensity - base) * bone;
                let noise: f64 = rng.sample(StandardNormal);
                if spec.noise_std > 0.0 && (r <= 1.0 || bone > 0.0) {
                    value += spec.noise_std * noise;
                }
                data.push(value.clamp(0.0, 1.0) as f32);
                labels.push(if patella >= 0.5 {
                    PATELLA_LABEL
                } else if femur >= 0.5 {
                    FEMUR_LABEL
                } else {
                    0
                });
            }
        }
    }
    Ok(Phantom {
        spec: spec.clone(),
        volume: Volume::new(spec.dims, spec.spacing, data)?,
        labels: LabelMap::new(spec.dims, spec.spacing, labels)?,
        truth: spec.ground_truth()?,
    })
}

/// Ranges for drawing a family of phantoms. The groove depth follows from
/// the angle and a facet half-width drawn from `facet_half_width_mm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomFamily {
    pub sulcus_angle_deg: (f64, f64),
    pub facet_half_width_mm: (f64, f64),
    pub peak_y_mm: (f64, f64),
    pub condyle_half_width_mm: (f64, f64),
    pub patella_gap_mm: (f64, f64),
    pub noise_std: f64,
    pub base: PhantomSpec,
}

impl PhantomFamily {
    /// Sulcus angles 140-148 degrees, grooves about 4-5.5 mm deep.
    pub fn healthy() -> Self {
        PhantomFamily {
            sulcus_angle_deg: (140.0, 148.0),
            facet_half_width_mm: (13.0, 15.0),
            peak_y_mm: (24.0, 26.0),
            condyle_half_width_mm: (21.0, 23.0),
            patella_gap_mm: (3.0, 4.0),
            noise_std: 0.02,
            base: PhantomSpec::default(),
        }
    }

    /// Sulcus angles 154-170 degrees, grooves about 1-3.5 mm deep.
    pub fn dysplastic() -> Self {
        PhantomFamily {
            sulcus_angle_deg: (154.0, 170.0),
            ..PhantomFamily::healthy()
        }
    }

    /// `n` specs drawn from the ranges; the noise seed of each is derived
    /// from `seed` as well.
    pub fn specs(&self, n: usize, seed: u64) -> Vec<PhantomSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        (0..n)
            .map(|_| {
                let sa = draw(self.sulcus_angle_deg);
                let a = draw(self.facet_half_width_mm);
                PhantomSpec {
                    sulcus_angle_deg: sa,
                    groove_depth_mm: a / (sa.to_radians() / 2.0).tan(),
                    peak_y_mm: draw(self.peak_y_mm),
                    condyle_half_width_mm: draw(self.condyle_half_width_mm),
                    patella_gap_mm: draw(self.patella_gap_mm),
                    noise_std: self.noise_std,
                    seed: draw((0.0, u32::MAX as f64)) as u64,
                    ..self.base.clone()
                }
            })
            .collect()
    }
}

/// Paths written by [`write_phantom`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomFiles {
    pub volume: PathBuf,
    pub labels: PathBuf,
    pub truth: PathBuf,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    spec: &'a PhantomSpec,
    ground_truth: &'a GrooveMeasurement,
}

/// Writes `<name>.vol`, `<name>_labels.vol` and `<name>_truth.json` (spec
/// plus analytic landmarks) into `dir`.
pub fn write_phantom(dir: impl AsRef<Path>, name: &str, p: &Phantom) -> Result<PhantomFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = PhantomFiles {
        volume: dir.join(format!("{name}.vol")),
        labels: dir.join(format!("{name}_labels.vol")),
        truth: dir.join(format!("{name}_truth.json")),
    };
    save_raw(&p.volume, &files.volume)?;
    save_labels(&p.labels, &files.labels)?;
    let truth = TruthFile {
        spec: &p.spec,
        ground_truth: &p.truth,
    };
    let text = serde_json::to_string_pretty(&truth).map_err(|e| Error::Json {
        path: files.truth.clone(),
        source: e,
    })?;
    fs::write(&files.truth, text).map_err(|e| Error::io(&files.truth, e))?;
    Ok(files)
}

/// Sulcus angle and groove depth on one axial slice with the landmarks they
/// were computed from, as `[x_mm, y_mm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrooveMeasurement {
    pub slice: usize,
    pub sulcus_angle_deg: f64,
    pub groove_depth_mm: f64,
    pub lateral_peak_mm: [f64; 2],
    pub medial_peak_mm: [f64; 2],
    pub trough_mm: [f64; 2],
}

impl GrooveMeasurement {
    /// Angle at the trough between the rays to the peaks, and the
    /// perpendicular distance from the trough to the peak-to-peak line. The
    /// trough must lie strictly behind that line.
    pub fn from_landmarks(slice: usize, lateral: [f64; 2], medial: [f64; 2], trough: [f64; 2]) -> Result<Self> {
        if !(lateral[0] < trough[0] && trough[0] < medial[0]) {
            return Err(Error::Unmeasurable("trough does not lie between the peaks".into()));
        }
        let dir = [medial[0] - lateral[0], medial[1] - lateral[1]];
        let rel = [trough[0] - lateral[0], trough[1] - lateral[1]];
        let depth = (dir[0] * rel[1] - dir[1] * rel[0]) / dir[0].hypot(dir[1]);
        if !(depth > 0.0) {
            return Err(Error::Unmeasurable("no trough behind the peak line".into()));
        }
        let l = [lateral[0] - trough[0], lateral[1] - trough[1]];
        let m = [medial[0] - trough[0], medial[1] - trough[1]];
        let angle = (l[0] * m[1] - l[1] * m[0]).abs().atan2(l[0] * m[0] + l[1] * m[1]);
        Ok(GrooveMeasurement {
            slice,
            sulcus_angle_deg: angle.to_degrees(),
            groove_depth_mm: depth,
            lateral_peak_mm: lateral,
            medial_peak_mm: medial,
            trough_mm: trough,
        })
    }

    /// The flat-trochlea limit (SA 180 degrees, depth 0) used to score an
    /// unmeasurable slice in paired statistics. Landmarks are NaN.
    pub fn flat(slice: usize) -> Self {
        GrooveMeasurement {
            slice,
            sulcus_angle_deg: 180.0,
            groove_depth_mm: 0.0,
            lateral_peak_mm: [f64::NAN; 2],
            medial_peak_mm: [f64::NAN; 2],
            trough_mm: [f64::NAN; 2],
        }
    }
}

/// The slice with the largest patella cross-section; ties go to the lowest
/// index. `None` for an empty mask.
pub fn measurement_slice(patella: &BinaryMask) -> Option<usize> {
    let [nx, ny, nz] = patella.dims();
    let plane = nx * ny;
    (0..nz)
        .map(|k| {
            (
                k,
                patella.data()[k * plane..(k + 1) * plane]
                    .iter()
                    .filter(|&&b| b != 0)
                    .count(),
            )
        })
        .filter(|&(_, c)| c > 0)
        .fold(None, |best: Option<(usize, usize)>, (k, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .map(|(k, _)| k)
}

/// Anterior bone surface of slice `k` as `[x_mm, y_mm]` per column, sorted
/// by x.
///
/// The slice is thresholded with Otsu over its positive voxels and only the
/// largest 4-connected bright region (the femur) is kept. In each column the
/// surface is the first voxel of that region, refined to where the intensity
/// crosses the threshold between it and the voxel in front.
pub fn anterior_profile(v: &Volume, k: usize) -> Result<Vec<[f64; 2]>> {
    let [nx, ny, nz] = v.dims();
    if k >= nz {
        return Err(Error::InvalidArgument(format!("slice {k} out of range 0..{nz}")));
    }
    let [hx, hy, _] = v.spacing();
    let slice = v.axial_slice(k);
    let positive: Vec<f32> = slice.iter().copied().filter(|&x| x > 0.0).collect();
    let threshold = otsu_threshold_values(&positive, OTSU_BINS)
        .map_err(|e| Error::Unmeasurable(format!("no bone/tissue contrast on slice {k}: {e}")))?;
    let plane = Grid::new([nx, ny, 1], [hx, hy, 1.0])?;
    let bright = BinaryMask::from_fn(plane, |i, j, _| slice[i + nx * j] >= threshold);
    let comps = label_components(&bright, Connectivity::Six);
    let largest = comps
        .sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c as u32 + 1)
        .ok_or_else(|| Error::Unmeasurable(format!("no bone on slice {k}")))?;

    let mut profile = Vec::new();
    for i in 0..nx {
        let Some(j) = (0..ny).find(|&j| comps.labels[i + nx * j] == largest) else {
            continue;
        };
        let mut y = j as f64;
        if j > 0 {
            let (v0, v1) = (slice[i + nx * (j - 1)] as f64, slice[i + nx * j] as f64);
            if v1 > v0 {
                y -= ((v1 - threshold as f64) / (v1 - v0)).clamp(0.0, 1.0);
            }
        }
        profile.push([i as f64 * hx, y * hy]);
    }
    Ok(profile)
}

/// Measures the groove on slice `k`.
///
/// Peaks are the most anterior profile points on each half of the femur
/// (ties go to the point nearer the middle); the trough is the most
/// posterior point strictly between them. Flat or convex surfaces give
/// [`Error::Unmeasurable`].
pub fn measure_sulcus_angle(v: &Volume, k: usize) -> Result<GrooveMeasurement> {
    let profile = anterior_profile(v, k)?;
    if profile.len() < 3 {
        return Err(Error::Unmeasurable(format!(
            "bone on slice {k} spans fewer than 3 columns"
        )));
    }
    let mid = 0.5 * (profile[0][0] + profile[profile.len() - 1][0]);
    let pick_peak = |range: &mut dyn Iterator<Item = usize>| {
        range.fold(None, |best: Option<usize>, i| match best {
            Some(b) if profile[b][1] < profile[i][1] => Some(b),
            Some(b) if profile[b][1] == profile[i][1] && (profile[b][0] - mid).abs() <= (profile[i][0] - mid).abs() => {
                Some(b)
            }
            _ => Some(i),
        })
    };
    let lat = pick_peak(&mut (0..profile.len()).filter(|&i| profile[i][0] < mid));
    let med = pick_peak(&mut (0..profile.len()).filter(|&i| profile[i][0] > mid));
    let (Some(lat), Some(med)) = (lat, med) else {
        return Err(Error::Unmeasurable(format!("slice {k} has no bone on one side")));
    };
    let centre = 0.5 * (profile[lat][0] + profile[med][0]);
    let trough = (lat + 1..med).fold(None, |best: Option<usize>, i| match best {
        Some(b) if profile[b][1] > profile[i][1] => Some(b),
        Some(b)
            if profile[b][1] == profile[i][1] && (profile[b][0] - centre).abs() <= (profile[i][0] - centre).abs() =>
        {
            Some(b)
        }
        _ => Some(i),
    });
    let Some(trough) = trough else {
        return Err(Error::Unmeasurable(format!(
            "no profile point between the peaks on slice {k}"
        )));
    };
    GrooveMeasurement::from_landmarks(k, profile[lat], profile[med], profile[trough])
}
