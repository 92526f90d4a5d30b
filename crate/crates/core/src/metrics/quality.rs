use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Volume};

fn check(a: &Volume, b: &Volume, m: &BinaryMask, what: &str) -> Result<()> {
    a.grid().ensure_same(b.grid(), what)?;
    a.grid().ensure_same(m.grid(), what)?;
    if m.is_empty() {
        return Err(Error::Degenerate(format!("{what}: mask is empty")));
    }
    Ok(())
}

/// Mean of `(a - b)^2` over the voxels with `m = 1`.
pub fn masked_mse(a: &Volume, b: &Volume, m: &BinaryMask) -> Result<f64> {
    check(a, b, m, "masked_mse")?;
    let sum: f64 = m
        .indices()
        .map(|i| {
            let d = a.data()[i] as f64 - b.data()[i] as f64;
            d * d
        })
        .sum();
    Ok(sum / m.count() as f64)
}

/// `-10 log10(mse)` for a data range of 1; infinite when `mse` is 0.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn masked_psnr(a: &Volume, b: &Volume, m: &BinaryMask) -> Result<f64> {
    masked_mse(a, b, m).map(psnr_from_mse)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimConfig {
    /// Side of the cubic Gaussian window in voxels; odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    /// Window 11, sigma 1.5, K1 0.01, K2 0.03, data range 1.
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimConfig {
    /// Window 7, for volumes with only 8 slices.
    pub fn desk() -> Self {
        SsimConfig {
            window: 7,
            ..SsimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        let pos = [self.sigma, self.k1, self.k2, self.data_range];
        if pos.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidArgument(
                "SSIM sigma, constants and data range must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Normalized 1D Gaussian taps; the 3D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - r;
                (-x * x / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// Mirror index for a window that runs off the edge: `-1 -> 0`, `n -> n - 1`.
/// Valid for overhangs up to `n`.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    r as usize
}

/// Separable filtering along each axis with edge reflection.
fn gaussian_filter(data: &[f64], dims: [usize; 3], taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let stride = [1, dims[0], dims[0] * dims[1]];
    let mut cur = data.to_vec();
    let mut next = vec![0.0; data.len()];
    for axis in 0..3 {
        let n = dims[axis];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = (idx / stride[axis]) % n;
            let base = idx - pos * stride[axis];
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let p = reflect(pos as isize + t as isize - r, n);
                acc += w * cur[base + p * stride[axis]];
            }
            *out = acc;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Per-voxel SSIM map of two volumes; the window runs off the edges by
/// reflection.
pub fn ssim_map(a: &Volume, b: &Volume, cfg: &SsimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    a.grid().ensure_same(b.grid(), "ssim_map")?;
    let dims = a.dims();
    if dims.iter().any(|&n| n < cfg.window) {
        return Err(Error::InvalidArgument(format!(
            "volume {dims:?} is smaller than the {} voxel SSIM window",
            cfg.window
        )));
    }
    let taps = cfg.taps();
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = gaussian_filter(&x, dims, &taps);
    let my = gaussian_filter(&y, dims, &taps);
    let sxx = gaussian_filter(&prod(&x, &x), dims, &taps);
    let syy = gaussian_filter(&prod(&y, &y), dims, &taps);
    let sxy = gaussian_filter(&prod(&x, &y), dims, &taps);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    Ok((0..x.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .collect())
}

/// Zeroes every voxel outside `m` in both volumes, computes the full SSIM
/// map and averages it over the mask.
pub fn masked_ssim(a: &Volume, b: &Volume, m: &BinaryMask, cfg: &SsimConfig) -> Result<f64> {
    check(a, b, m, "masked_ssim")?;
    let za = crate::masking::apply_mask(a, &invert(m))?;
    let zb = crate::masking::apply_mask(b, &invert(m))?;
    let map = ssim_map(&za, &zb, cfg)?;
    Ok(m.indices().map(|i| map[i]).sum::<f64>() / m.count() as f64)
}

fn invert(m: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(*m.grid(), |i, j, k| !m.get(i, j, k))
}

/// Masked metrics of one prediction against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    /// Serialized as the string `"inf"` when the volumes agree on the mask.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub mask_voxels: usize,
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!(
            "expected a number or \"inf\", got {t:?}"
        ))),
    }
}

pub fn evaluate(pred: &Volume, reference: &Volume, m: &BinaryMask, cfg: &SsimConfig) -> Result<MetricReport> {
    let mse = masked_mse(pred, reference, m)?;
    Ok(MetricReport {
        mse,
        psnr_db: psnr_from_mse(mse),
        ssim: masked_ssim(pred, reference, m, cfg)?,
        mask_voxels: m.count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

/// Mean and standard deviation of each metric over a set of reports. PSNR
/// is averaged per volume, so it is not `-10 log10` of the mean MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mse: MeanStd,
    /// Over the finite PSNR values only; `infinite_psnr` counts the rest.
    pub psnr_db: Option<MeanStd>,
    pub infinite_psnr: usize,
    pub ssim: MeanStd,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<Aggregate> {
    let col = |f: fn(&MetricReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let mse = MeanStd::of(&col(|r| r.mse)).ok_or_else(|| Error::Degenerate("no reports to aggregate".into()))?;
    let psnr: Vec<f64> = col(|r| r.psnr_db).into_iter().filter(|v| v.is_finite()).collect();
    Ok(Aggregate {
        count: reports.len(),
        mse,
        psnr_db: MeanStd::of(&psnr),
        infinite_psnr: reports.len() - psnr.len(),
        ssim: MeanStd::of(&col(|r| r.ssim)).expect("non-empty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: [usize; 3], rng: &mut impl Rng) -> Volume {
        let n = dims.iter().product();
        Volume::new(dims, [1.0; 3], (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    fn random_mask(dims: [usize; 3], p: f64, rng: &mut impl Rng) -> BinaryMask {
        let mut m = BinaryMask::from_fn(Grid::new(dims, [1.0; 3]).unwrap(), |_, _, _| rng.random_bool(p));
        m.set(0, 0, 0, true);
        m
    }

    /// The SSIM definition evaluated window by window with the full 3D
    /// weight, no separability.
    pub(crate) fn brute_force_ssim_map(a: &Volume, b: &Volume, cfg: &SsimConfig) -> Vec<f64> {
        let dims = a.dims();
        let g = cfg.taps();
        let r = (cfg.window / 2) as isize;
        let mut out = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let (mut sw, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for dk in -r..=r {
                        for dj in -r..=r {
                            for di in -r..=r {
                                let w = g[(di + r) as usize] * g[(dj + r) as usize] * g[(dk + r) as usize];
                                let p = [
                                    reflect(i as isize + di, dims[0]),
                                    reflect(j as isize + dj, dims[1]),
                                    reflect(k as isize + dk, dims[2]),
                                ];
                                let x = a.get(p[0], p[1], p[2]) as f64;
                                let y = b.get(p[0], p[1], p[2]) as f64;
                                sw += w;
                                sx += w * x;
                                sy += w * y;
                                sxx += w * x * x;
                                syy += w * y * y;
                                sxy += w * x * y;
                            }
                        }
                    }
                    let (ux, uy) = (sx / sw, sy / sw);
                    let vx = sxx / sw - ux * ux;
                    let vy = syy / sw - uy * uy;
                    let c = sxy / sw - ux * uy;
                    out.push(
                        ((2.0 * ux * uy + cfg.c1()) * (2.0 * c + cfg.c2()))
                            / ((ux * ux + uy * uy + cfg.c1()) * (vx + vy + cfg.c2())),
                    );
                }
            }
        }
        out
    }

    #[test]
    fn identical_volumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_volume([12, 12, 12], &mut rng);
        let m = random_mask([12, 12, 12], 0.3, &mut rng);
        assert_eq!(masked_mse(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(masked_psnr(&a, &a, &m).unwrap(), f64::INFINITY);
        assert_eq!(masked_ssim(&a, &a, &m, &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn psnr_of_known_mse() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let grid = Grid::new([4, 4, 4], [1.0; 3]).unwrap();
        let a = Volume::filled([4, 4, 4], [1.0; 3], 0.5).unwrap();
        let b = Volume::filled([4, 4, 4], [1.0; 3], 0.6).unwrap();
        let m = BinaryMask::from_fn(grid, |i, _, _| i < 2);
        assert!((masked_psnr(&a, &b, &m).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn mse_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_volume([9, 7, 5], &mut rng), random_volume([9, 7, 5], &mut rng));
        let m = random_mask([9, 7, 5], 0.4, &mut rng);
        let (mut sum, mut n) = (0.0f64, 0usize);
        for i in 0..a.len() {
            if m.data()[i] == 1 {
                sum += (a.data()[i] as f64 - b.data()[i] as f64).powi(2);
                n += 1;
            }
        }
        assert!((masked_mse(&a, &b, &m).unwrap() - sum / n as f64).abs() < 1e-15);
    }

    #[test]
    fn ssim_matches_brute_force_on_random_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (
            random_volume([16, 16, 16], &mut rng),
            random_volume([16, 16, 16], &mut rng),
        );
        let cfg = SsimConfig::default();
        let fast = ssim_map(&a, &b, &cfg).unwrap();
        let slow = brute_force_ssim_map(&a, &b, &cfg);
        let worst = fast.iter().zip(&slow).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn constant_regions_follow_closed_form() {
        let (c1, c2) = (0.3f32, 0.7f32);
        let grid = Grid::new([24, 24, 24], [1.0; 3]).unwrap();
        let a = Volume::filled([24; 3], [1.0; 3], c1).unwrap();
        let b = Volume::filled([24; 3], [1.0; 3], c2).unwrap();
        let m = BinaryMask::full(grid);
        let cfg = SsimConfig::default();
        let (c1, c2) = (c1 as f64, c2 as f64);
        let expected = (2.0 * c1 * c2 + cfg.c1()) / (c1 * c1 + c2 * c2 + cfg.c1());
        let got = masked_ssim(&a, &b, &m, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");

        // inside a smaller mask, the window of the centre voxel stays in the mask
        let inner = BinaryMask::from_fn(grid, |i, j, k| [i, j, k].iter().all(|&v| (4..20).contains(&v)));
        let za = crate::masking::apply_mask(&a, &invert(&inner)).unwrap();
        let zb = crate::masking::apply_mask(&b, &invert(&inner)).unwrap();
        let map = ssim_map(&za, &zb, &cfg).unwrap();
        assert!((map[grid.index(12, 12, 12)] - expected).abs() < 1e-6);
    }

    #[test]
    fn rejects_empty_mask_and_small_volume() {
        let grid = Grid::new([8, 8, 8], [1.0; 3]).unwrap();
        let a = Volume::zeros([8, 8, 8], [1.0; 3]).unwrap();
        assert!(masked_mse(&a, &a, &BinaryMask::empty(grid)).is_err());
        assert!(masked_ssim(&a, &a, &BinaryMask::full(grid), &SsimConfig::default()).is_err());
        assert!(masked_ssim(&a, &a, &BinaryMask::full(grid), &SsimConfig::desk()).is_ok());
    }

    #[test]
    fn report_serializes_infinite_psnr() {
        let r = MetricReport {
            mse: 0.0,
            psnr_db: f64::INFINITY,
            ssim: 1.0,
            mask_voxels: 3,
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"psnr_db\":\"inf\""), "{text}");
        assert_eq!(serde_json::from_str::<MetricReport>(&text).unwrap(), r);
        let finite = MetricReport {
            mse: 0.01,
            psnr_db: 20.0,
            ..r
        };
        assert_eq!(
            serde_json::from_str::<MetricReport>(&serde_json::to_string(&finite).unwrap()).unwrap(),
            finite
        );
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        let r = |mse: f64| MetricReport {
            mse,
            psnr_db: psnr_from_mse(mse),
            ssim: 0.5,
            mask_voxels: 1,
        };
        let agg = aggregate(&[r(0.01), r(0.03), r(0.0)]).unwrap();
        assert!((agg.mse.mean - 0.04 / 3.0).abs() < 1e-15);
        assert!((agg.mse.std - 0.015275252316519466).abs() < 1e-12);
        assert_eq!(agg.infinite_psnr, 1);
        assert_eq!(agg.psnr_db.as_ref().unwrap().mean, 0.5 * (20.0 + psnr_from_mse(0.03)));
        assert!(aggregate(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn out_of_mask_voxels_do_not_matter(seed in any::<u64>(), p in 0.05f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = [8, 8, 8];
            let (a, b) = (random_volume(dims, &mut rng), random_volume(dims, &mut rng));
            let m = random_mask(dims, p, &mut rng);
            let noise = |v: &Volume, rng: &mut ChaCha8Rng| {
                let data = v.data().iter().zip(m.data()).map(|(&x, &b)| if b == 1 { x } else { rng.random() }).collect();
                Volume::new(dims, [1.0; 3], data).unwrap()
            };
            let (a2, b2) = (noise(&a, &mut rng), noise(&b, &mut rng));
            let cfg = SsimConfig::desk();
            let r1 = evaluate(&a, &b, &m, &cfg).unwrap();
            let r2 = evaluate(&a2, &b2, &m, &cfg).unwrap();
            prop_assert_eq!(&r1, &r2);
            prop_assert_eq!(r1.psnr_db, psnr_from_mse(r1.mse));
            prop_assert!((-1.0..=1.0).contains(&r1.ssim));
        }
    }
}
