//! Acceptance suite. Every criterion computes its expected values with an
//! oracle written here, independent of the library code under test, and
//! prints one PASS/FAIL line. Exits non-zero if any criterion fails.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trochlea::denoiser::{smoothed, train, DenoiserNet, NetConfig, TrainConfig, TrainingPair};
use trochlea::diffusion::{
    inpaint, p_sample_step, q_sample, standard_normal, FixedPrediction, PosteriorCoeffs, ScheduleConfig,
};
use trochlea::masking::otsu::otsu_cut;
use trochlea::masking::{
    dilate, erode, inpainting_mask, label_components, localize_patella, Connectivity, MaskSpec, PatellaSearch,
    StructuringElement,
};
use trochlea::metrics::{evaluate, masked_ssim, ssim_map, wilcoxon_signed_rank, MetricReport, SsimConfig};
use trochlea::phantom::{generate_phantom, measure_sulcus_angle, measurement_slice, GrooveMeasurement, PhantomFamily};
use trochlea::preprocess::{preprocess, PreprocessConfig};
use trochlea::{dwt3, idwt3, BinaryMask, Volume, WaveletCoeffs};

type Outcome = (bool, String);

fn random_volume(dims: [usize; 3], spacing: [f64; 3], rng: &mut impl Rng) -> Volume {
    let n = dims.iter().product();
    Volume::new(dims, spacing, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn random_mask(dims: [usize; 3], spacing: [f64; 3], p: f64, rng: &mut impl Rng) -> BinaryMask {
    let n: usize = dims.iter().product();
    BinaryMask::new(dims, spacing, (0..n).map(|_| rng.random_bool(p) as u8).collect()).unwrap()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Orthonormal Haar coefficient of `band` for the 2x2x2 block at `(i, j, k)`:
/// the block sum weighted by +-1/sqrt(8), the sign flipping along every axis
/// whose band bit is set (bit 0 x, bit 1 y, bit 2 z) for the second sample.
fn haar_oracle(v: &Volume, band: usize, i: usize, j: usize, k: usize) -> f64 {
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let flips = [
                    (band & 1 != 0) && dx == 1,
                    (band & 2 != 0) && dy == 1,
                    (band & 4 != 0) && dz == 1,
                ];
                let sign = if flips.iter().filter(|&&f| f).count() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                acc += sign * v.get(2 * i + dx, 2 * j + dy, 2 * k + dz) as f64;
            }
        }
    }
    acc / 8f64.sqrt()
}

fn c1_wavelet() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut inf, mut parseval, mut forward) = (0f64, 0f64, 0f64);
    for case in 0..100 {
        let dims = if case == 0 {
            [64, 64, 16]
        } else {
            [
                2 * rng.random_range(1..=32),
                2 * rng.random_range(1..=32),
                2 * rng.random_range(1..=8),
            ]
        };
        let v = random_volume(dims, [1.0; 3], &mut rng);
        let c = dwt3(&v).unwrap();
        let back = idwt3(&c).unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            inf = inf.max((a - b).abs() as f64);
        }
        let ev: f64 = v.data().iter().map(|&x| (x as f64) * (x as f64)).sum();
        let ec: f64 = c.data().iter().map(|&x| (x as f64) * (x as f64)).sum();
        parseval = parseval.max((ev - ec).abs() / ev);
        if case < 10 {
            let bd = c.band_dims();
            for band in 0..8 {
                for k in 0..bd[2] {
                    for j in 0..bd[1] {
                        for i in 0..bd[0] {
                            let got = c.band(band)[i + bd[0] * (j + bd[1] * k)] as f64;
                            forward = forward.max((got - haar_oracle(&v, band, i, j, k)).abs());
                        }
                    }
                }
            }
        }
    }
    (
        inf < 1e-5 && parseval < 1e-5 && forward < 1e-5,
        format!(
            "max |idwt(dwt(v)) - v| {inf:.1e}, Parseval error {parseval:.1e}, forward vs direct sums {forward:.1e}"
        ),
    )
}

fn c2_schedule() -> Outcome {
    let cfg = ScheduleConfig::full();
    let s = cfg.build().unwrap();
    let mut product = 1.0f64;
    for t in 1..=1000 {
        product *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0);
    }
    let rel = (s.alpha_bar(1000) - product).abs() / product;
    let rounded = format!("{:.2e}", s.alpha_bar(1000));

    // beta = 0: the reverse step must return x_t unchanged and draw nothing
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let still = PosteriorCoeffs::new(0.0, 0.37).unwrap();
    let x_t: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x0: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let beta0 = still.variance == 0.0
        && x_t
            .iter()
            .zip(&x0)
            .all(|(&xt, &z)| still.x0_coef * z + still.xt_coef * xt == xt);

    // t = 1: mean is the prediction itself and the variance is zero
    let mut ok_t1 = true;
    for sched in [s.clone(), ScheduleConfig::desk().build().unwrap()] {
        let c = |seed: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            WaveletCoeffs::new(
                [2, 2, 1],
                [1.0; 3],
                (0..32).map(|_| r.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let (xt, pred) = (c(1), c(2));
        let p = sched.posterior(1).unwrap();
        ok_t1 &= p.variance == 0.0 && p.x0_coef == 1.0 && p.xt_coef == 0.0;
        ok_t1 &= p_sample_step(&xt, &pred, 1, &sched, &mut rng).unwrap() == pred;
    }
    (
        rel < 1e-3 && rounded == "4.04e-5" && beta0 && ok_t1,
        format!(
            "alpha_bar(1000) {:.6e} vs product {product:.6e} (rel {rel:.1e}, rounds to {rounded}), beta=0 identity {beta0}, t=1 identity {ok_t1}",
            s.alpha_bar(1000)
        ),
    )
}

/// One tracked coefficient, so the criterion is exactly one mean and one
/// variance test per timestep.
fn c3_forward() -> Outcome {
    let s = ScheduleConfig::full().build().unwrap();
    let x0_value = 0.7;
    let x0 = WaveletCoeffs::new([1, 1, 1], [1.0; 3], vec![x0_value as f32; 8]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let n = 10_000;
    let mut worst = (0f64, String::new());
    for t in [1usize, 250, 500, 1000] {
        let mut ab = 1.0f64;
        for u in 1..=t {
            ab *= 1.0 - (1e-4 + (0.02 - 1e-4) * (u - 1) as f64 / 999.0);
        }
        // Welford accumulation
        let (mut mean, mut m2) = (0f64, 0f64);
        for d in 0..n {
            let eps = standard_normal(&x0, &mut rng);
            let x = q_sample(&x0, t, &eps, &s).unwrap().data()[0] as f64;
            let delta = x - mean;
            mean += delta / (d + 1) as f64;
            m2 += delta * (x - mean);
        }
        let var = 1.0 - ab;
        let z_mean = (mean - ab.sqrt() * x0.data()[0] as f64) / (var / n as f64).sqrt();
        let z_var = (m2 / (n - 1) as f64 - var) / (var * (2.0 / (n - 1) as f64).sqrt());
        for (z, what) in [(z_mean, "mean"), (z_var, "variance")] {
            if z.abs() > worst.0 {
                worst = (z.abs(), format!("{what} at t={t}"));
            }
        }
    }
    (
        worst.0 < 3.0,
        format!("largest deviation {:.2} standard errors ({})", worst.0, worst.1),
    )
}

fn c4_gradient() -> Outcome {
    let cfg = NetConfig {
        base_channels: 2,
        channel_mult: vec![1, 2],
        res_blocks: 1,
        time_embed_dim: 4,
        activation: trochlea::denoiser::Activation::Silu,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut net = DenoiserNet::new(cfg, 3).unwrap();
    for p in net.params_mut() {
        *p = 0.3 * rng.random_range(-1.0..1.0);
    }
    // keep the sparse-band predictions away from the kink of |x|
    for &b in &trochlea::wavelet::SPARSE_BANDS {
        net.output_bias_mut()[b] = if b % 2 == 0 { 4.0 } else { -4.0 };
    }
    let dims = [8, 8, 4];
    let mut coeffs = || {
        WaveletCoeffs::new(
            dims,
            [1.0; 3],
            (0..8 * 256).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let (x_t, m1, m2, x0) = (coeffs(), coeffs(), coeffs(), coeffs());
    let input = trochlea::diffusion::ConditionedInput::new(&x_t, &m1, &m2, 17).unwrap();
    net.zero_grad();
    net.backward(&input, &x0, 1.0).unwrap();
    let analytic = net.gradient().to_vec();
    let h = 1e-4;
    let mut worst = 0f64;
    for i in 0..net.param_count() {
        let p = net.params()[i];
        net.params_mut()[i] = p + h;
        let up = net.loss(&input, &x0, 1.0).unwrap();
        net.params_mut()[i] = p - h;
        let down = net.loss(&input, &x0, 1.0).unwrap();
        net.params_mut()[i] = p;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-7));
    }
    let count = net.param_count();
    (
        count <= 5000 && worst < 1e-3,
        format!("{count} parameters on 8x8x4 coefficients, worst relative error {worst:.1e}"),
    )
}

fn c5_oracle_inpaint() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut inside = 0f64;
    let mut outside_identical = true;
    for (dims, sched) in [
        ([16, 16, 8], ScheduleConfig::full()),
        ([32, 32, 8], ScheduleConfig::desk()),
    ] {
        let s = sched.build().unwrap();
        let truth = random_volume(dims, [1.0; 3], &mut rng);
        let mask = random_mask(dims, [1.0; 3], 0.4, &mut rng);
        let out = inpaint(&truth, &mask, &FixedPrediction(dwt3(&truth).unwrap()), &s, &mut rng)
            .unwrap()
            .output;
        for idx in 0..truth.len() {
            let (o, t) = (out.data()[idx], truth.data()[idx]);
            if mask.is_set(idx) {
                inside = inside.max((o - t).abs() as f64);
            } else {
                outside_identical &= o.to_bits() == t.to_bits();
            }
        }
    }
    (
        inside < 1e-4 && outside_identical,
        format!("max error inside mask {inside:.1e}, outside bit-identical {outside_identical}"),
    )
}

/// Offsets `o` (in voxels) inside the world-space ellipsoid, by definition.
fn in_ellipsoid(o: [isize; 3], radius: [f64; 3], spacing: [f64; 3]) -> bool {
    let mut s = 0.0;
    for a in 0..3 {
        if o[a] != 0 {
            if radius[a] <= 0.0 {
                return false;
            }
            s += (o[a] as f64 * spacing[a] / radius[a]).powi(2);
        }
    }
    s <= 1.0 + 1e-9
}

fn morphology_mismatches(rng: &mut ChaCha8Rng, cases: usize) -> usize {
    let mut bad = 0;
    for _ in 0..cases {
        let dims = [
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        ];
        let spacing = [
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..3.0),
        ];
        let radius = [
            rng.random_range(0.0..3.5),
            rng.random_range(0.0..3.5),
            rng.random_range(0.0..4.0),
        ];
        let m = random_mask(dims, spacing, rng.random_range(0.1..0.8), rng);
        let se = StructuringElement::ellipsoid(radius, spacing);
        let g = *m.grid();
        let set: Vec<[isize; 3]> = (0..g.len())
            .filter(|&q| m.is_set(q))
            .map(|q| {
                let c = g.coords(q);
                [c[0] as isize, c[1] as isize, c[2] as isize]
            })
            .collect();
        let span: Vec<isize> = (0..3).map(|a| (radius[a] / spacing[a]).ceil() as isize + 1).collect();
        let dil = BinaryMask::from_fn(g, |i, j, k| {
            let p = [i as isize, j as isize, k as isize];
            set.iter()
                .any(|q| in_ellipsoid([q[0] - p[0], q[1] - p[1], q[2] - p[2]], radius, spacing))
        });
        let ero = BinaryMask::from_fn(g, |i, j, k| {
            for dk in -span[2]..=span[2] {
                for dj in -span[1]..=span[1] {
                    for di in -span[0]..=span[0] {
                        if !in_ellipsoid([di, dj, dk], radius, spacing) {
                            continue;
                        }
                        let q = [i as isize + di, j as isize + dj, k as isize + dk];
                        let ok = (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as isize)
                            && m.get(q[0] as usize, q[1] as usize, q[2] as usize);
                        if !ok {
                            return false;
                        }
                    }
                }
            }
            true
        });
        bad += (dilate(&m, &se) != dil || erode(&m, &se) != ero) as usize;
    }
    bad
}

/// Otsu by minimizing the within-class variance over every cut.
fn otsu_mismatches(rng: &mut ChaCha8Rng, cases: usize) -> usize {
    let mut bad = 0;
    for _ in 0..cases {
        let bins = rng.random_range(2..=256);
        let counts: Vec<u64> = (0..bins)
            .map(|_| {
                if rng.random_bool(0.4) {
                    0
                } else {
                    rng.random_range(1..100)
                }
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for k in 1..bins {
            let class = |r: std::ops::Range<usize>| {
                let w: f64 = counts[r.clone()].iter().map(|&c| c as f64).sum();
                if w == 0.0 {
                    return None;
                }
                let mu = r.clone().map(|i| i as f64 * counts[i] as f64).sum::<f64>() / w;
                let var = r.map(|i| (i as f64 - mu).powi(2) * counts[i] as f64).sum::<f64>() / w;
                Some(w * var)
            };
            let (Some(a), Some(b)) = (class(0..k), class(k..bins)) else {
                continue;
            };
            let within = a + b;
            if best.is_none_or(|(_, w)| within < w - 1e-9 * w.abs().max(1.0)) {
                best = Some((k, within));
            }
        }
        bad += (otsu_cut(&counts) != best.map(|b| b.0)) as usize;
    }
    bad
}

/// Components by breadth-first flood fill over explicitly listed neighbours.
fn components_mismatches(rng: &mut ChaCha8Rng, cases: usize) -> usize {
    let mut bad = 0;
    for case in 0..cases {
        let dims = [
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        ];
        let m = random_mask(dims, [1.0; 3], rng.random_range(0.2..0.7), rng);
        let six = case % 2 == 0;
        let g = *m.grid();
        let mut label = vec![0usize; g.len()];
        let mut next = 0;
        for start in 0..g.len() {
            if !m.is_set(start) || label[start] != 0 {
                continue;
            }
            next += 1;
            label[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(p) = queue.pop_front() {
                let c = g.coords(p);
                for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let steps = dx.abs() + dy.abs() + dz.abs();
                            if steps == 0 || (six && steps != 1) {
                                continue;
                            }
                            let q = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                            if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as isize) {
                                continue;
                            }
                            let qi = g.index(q[0] as usize, q[1] as usize, q[2] as usize);
                            if m.is_set(qi) && label[qi] == 0 {
                                label[qi] = next;
                                queue.push_back(qi);
                            }
                        }
                    }
                }
            }
        }
        let comps = label_components(
            &m,
            if six {
                Connectivity::Six
            } else {
                Connectivity::TwentySix
            },
        );
        let mut same = comps.count() == next;
        for a in 0..g.len() {
            same &= (comps.labels[a] == 0) == (label[a] == 0);
            for b in 0..a {
                if label[a] != 0 && label[b] != 0 {
                    same &= (label[a] == label[b]) == (comps.labels[a] == comps.labels[b]);
                }
            }
        }
        bad += (!same) as usize;
    }
    bad
}

/// SSIM from explicit weighted window sums, no separability.
fn ssim_mismatches(rng: &mut ChaCha8Rng, cases: usize) -> usize {
    let cfg = SsimConfig::desk();
    let r = 3isize;
    let w1: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let norm: f64 = w1.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if i < 0 {
            (-1 - i) as usize
        } else if i >= n {
            (2 * n - 1 - i) as usize
        } else {
            i as usize
        }
    };
    let mut bad = 0;
    for _ in 0..cases {
        let dims = [
            rng.random_range(7..=10),
            rng.random_range(7..=10),
            rng.random_range(7..=9),
        ];
        let a = random_volume(dims, [1.0; 3], rng);
        let b = random_volume(dims, [1.0; 3], rng);
        let direct = |a: &Volume, b: &Volume| -> Vec<f64> {
            let mut out = Vec::with_capacity(a.len());
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let mut s = [0f64; 5];
                        for dk in -r..=r {
                            for dj in -r..=r {
                                for di in -r..=r {
                                    let w = w1[(di + r) as usize] * w1[(dj + r) as usize] * w1[(dk + r) as usize]
                                        / norm.powi(3);
                                    let p = [
                                        mirror(i as isize + di, dims[0]),
                                        mirror(j as isize + dj, dims[1]),
                                        mirror(k as isize + dk, dims[2]),
                                    ];
                                    let x = a.get(p[0], p[1], p[2]) as f64;
                                    let y = b.get(p[0], p[1], p[2]) as f64;
                                    s[0] += w * x;
                                    s[1] += w * y;
                                    s[2] += w * x * x;
                                    s[3] += w * y * y;
                                    s[4] += w * x * y;
                                }
                            }
                        }
                        let (mx, my) = (s[0], s[1]);
                        let (vx, vy, cov) = (s[2] - mx * mx, s[3] - my * my, s[4] - mx * my);
                        out.push(
                            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)),
                        );
                    }
                }
            }
            out
        };
        let map = ssim_map(&a, &b, &cfg).unwrap();
        let want = direct(&a, &b);
        let mut ok = map.iter().zip(&want).all(|(p, q)| (p - q).abs() < 1e-9);
        // masked: zero outside the mask, average the map over the mask
        let mut m = random_mask(dims, [1.0; 3], 0.3, rng);
        m.set(0, 0, 0, true);
        let zero = |v: &Volume| {
            Volume::new(
                dims,
                [1.0; 3],
                v.data().iter().zip(m.data()).map(|(&x, &k)| x * k as f32).collect(),
            )
            .unwrap()
        };
        let zmap = direct(&zero(&a), &zero(&b));
        let want_masked = m.indices().map(|i| zmap[i]).sum::<f64>() / m.count() as f64;
        ok &= (masked_ssim(&a, &b, &m, &cfg).unwrap() - want_masked).abs() < 1e-9;
        bad += (!ok) as usize;
    }
    bad
}

/// Signed-rank tails by enumerating all sign patterns over mid-ranks found by counting.
fn wilcoxon_mismatches(rng: &mut ChaCha8Rng, cases: usize) -> (usize, usize) {
    let (mut bad, mut tested) = (0, 0);
    while tested < cases {
        let n = rng.random_range(1..=10);
        let before: Vec<f64> = (0..n).map(|_| rng.random_range(0..7) as f64 * 0.5).collect();
        let after: Vec<f64> = (0..n).map(|_| rng.random_range(0..7) as f64 * 0.5).collect();
        let d: Vec<f64> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| b - a)
            .filter(|&x| x != 0.0)
            .collect();
        if d.is_empty() {
            assert!(wilcoxon_signed_rank(&before, &after).is_err());
            continue;
        }
        tested += 1;
        let r = wilcoxon_signed_rank(&before, &after).unwrap();
        let rank = |x: f64| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let ties = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (ties + 1.0) / 2.0
        };
        let ranks: Vec<f64> = d.iter().map(|&x| rank(x)).collect();
        let w: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
        let m = d.len();
        let (mut ge, mut le) = (0u32, 0u32);
        for signs in 0u32..1 << m {
            let s: f64 = (0..m).filter(|&i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
            ge += (s >= w - 1e-9) as u32;
            le += (s <= w + 1e-9) as u32;
        }
        let total = (1u32 << m) as f64;
        let (pg, pl) = (ge as f64 / total, le as f64 / total);
        let two = (2.0 * pg.min(pl)).min(1.0);
        let ok = (r.p_greater - pg).abs() < 1e-12
            && (r.p_less - pl).abs() < 1e-12
            && (r.p_two_sided - two).abs() < 1e-12
            && r.w_plus == w;
        bad += (!ok) as usize;
    }
    (bad, tested)
}

fn c6_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let cases = 120;
    let morph = morphology_mismatches(&mut rng, cases);
    let otsu = otsu_mismatches(&mut rng, cases);
    let cc = components_mismatches(&mut rng, cases);
    let ssim = ssim_mismatches(&mut rng, 100);
    let (wil, wil_n) = wilcoxon_mismatches(&mut rng, cases);
    (
        morph + otsu + cc + ssim + wil == 0,
        format!(
            "mismatches: morphology {morph}/{cases}, Otsu {otsu}/{cases}, components {cc}/{cases}, SSIM {ssim}/100, Wilcoxon {wil}/{wil_n}"
        ),
    )
}

fn desk_pairs(family: &PhantomFamily, n: usize, seed: u64) -> Vec<(TrainingPair, BinaryMask)> {
    family
        .specs(n, seed)
        .iter()
        .map(|s| {
            let p = generate_phantom(s).unwrap();
            let (mask, _) = inpainting_mask(&p.labels, &MaskSpec::desk(), &PatellaSearch::desk()).unwrap();
            let patella = localize_patella(&p.labels, &PatellaSearch::desk()).expect("phantom patella");
            (TrainingPair { y0: p.volume, mask }, patella)
        })
        .collect()
}

const NET_SEED: u64 = 0;

fn c7_training() -> (Outcome, Option<DenoiserNet>) {
    let data: Vec<TrainingPair> = desk_pairs(&PhantomFamily::healthy(), 50, 1)
        .into_iter()
        .map(|p| p.0)
        .collect();
    let schedule = ScheduleConfig::desk().build().unwrap();
    let cfg = TrainConfig::desk();
    let mut net = DenoiserNet::new(NetConfig::desk(), NET_SEED).unwrap();
    let report = match train(&mut net, &data, &schedule, &cfg, &mut |_, _| {}) {
        Ok(r) => r,
        Err(e) => return ((false, format!("training failed: {e}")), None),
    };
    let window = 100;
    let initial = report.losses[..window].iter().sum::<f64>() / window as f64;
    let last = *smoothed(&report.losses, window).last().unwrap();
    let ratio = last / initial;

    // two independent short runs must agree with each other and with the
    // start of the full run, bit for bit
    let short = TrainConfig {
        iterations: 150,
        ..cfg.clone()
    };
    let run = || {
        let mut n = DenoiserNet::new(NetConfig::desk(), NET_SEED).unwrap();
        let r = train(&mut n, &data, &schedule, &short, &mut |_, _| {}).unwrap();
        (n.params().to_vec(), r.losses)
    };
    let (pa, la) = run();
    let (pb, lb) = run();
    let reproducible = pa == pb && la == lb && la[..] == report.losses[..short.iterations];
    (
        (
            cfg.iterations <= 10_000 && ratio < 0.2 && reproducible,
            format!(
                "{} iterations on 50 phantoms: smoothed loss {initial:.4} -> {last:.4} ({:.1} % of initial), reruns bit-identical {reproducible}",
                cfg.iterations,
                100.0 * ratio
            ),
        ),
        Some(net),
    )
}

fn measure_or_flat(v: &Volume, k: usize) -> (GrooveMeasurement, bool) {
    match measure_sulcus_angle(v, k) {
        Ok(m) => (m, true),
        Err(trochlea::Error::Unmeasurable(_)) => (GrooveMeasurement::flat(k), false),
        Err(e) => panic!("measurement failed: {e}"),
    }
}

fn c8_directional(net: Option<&DenoiserNet>, reports: &mut Vec<MetricReport>) -> Outcome {
    let Some(net) = net else {
        return (false, "no trained model".into());
    };
    let schedule = ScheduleConfig::desk().build().unwrap();
    let (mut sa, mut tgd) = ((vec![], vec![]), (vec![], vec![]));
    let mut unmeasurable = 0;
    for (i, (pair, patella)) in desk_pairs(&PhantomFamily::dysplastic(), 20, 2).into_iter().enumerate() {
        let k = measurement_slice(&patella).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let out = inpaint(&pair.y0, &pair.mask, net, &schedule, &mut rng).unwrap().output;
        reports.push(evaluate(&out, &pair.y0, &pair.mask, &SsimConfig::desk()).unwrap());
        let (before, ok_b) = measure_or_flat(&pair.y0, k);
        let (after, ok_a) = measure_or_flat(&out, k);
        unmeasurable += (!ok_b) as usize + (!ok_a) as usize;
        sa.0.push(before.sulcus_angle_deg);
        sa.1.push(after.sulcus_angle_deg);
        tgd.0.push(before.groove_depth_mm);
        tgd.1.push(after.groove_depth_mm);
    }
    let (sa_b, sa_a) = (median(&sa.0), median(&sa.1));
    let (tgd_b, tgd_a) = (median(&tgd.0), median(&tgd.1));
    let w = wilcoxon_signed_rank(&sa.0, &sa.1).unwrap();
    let wt = wilcoxon_signed_rank(&tgd.0, &tgd.1).unwrap();
    (
        sa_b - sa_a >= 5.0 && tgd_a > tgd_b && w.p_greater < 0.05,
        format!(
            "median SA {sa_b:.1} -> {sa_a:.1} deg, median TGD {tgd_b:.2} -> {tgd_a:.2} mm, one-sided p (SA decrease) {:.1e}, (TGD increase) {:.1e}, unmeasurable {unmeasurable}",
            w.p_greater, wt.p_less
        ),
    )
}

fn c9_metrics(mut reports: Vec<MetricReport>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let cfg = SsimConfig::desk();
    let mut invariant = true;
    for _ in 0..50 {
        let dims = [
            rng.random_range(7..=14),
            rng.random_range(7..=14),
            rng.random_range(7..=10),
        ];
        let (a, b) = (
            random_volume(dims, [1.0; 3], &mut rng),
            random_volume(dims, [1.0; 3], &mut rng),
        );
        let mut m = random_mask(dims, [1.0; 3], rng.random_range(0.05..0.6), &mut rng);
        m.set(dims[0] / 2, dims[1] / 2, dims[2] / 2, true);
        let r = evaluate(&a, &b, &m, &cfg).unwrap();
        let perturb = |v: &Volume, rng: &mut ChaCha8Rng| {
            let data = v
                .data()
                .iter()
                .zip(m.data())
                .map(|(&x, &k)| if k == 1 { x } else { rng.random_range(-100.0..100.0) })
                .collect();
            Volume::new(dims, [1.0; 3], data).unwrap()
        };
        let (a2, b2) = (perturb(&a, &mut rng), perturb(&b, &mut rng));
        let r2 = evaluate(&a2, &b2, &m, &cfg).unwrap();
        invariant &= r2.mse == r.mse && r2.psnr_db == r.psnr_db && (r2.ssim - r.ssim).abs() < 1e-12;
        reports.push(r);
        // identical inside the mask: mse 0, infinite PSNR
        reports.push(evaluate(&a, &a2, &m, &cfg).unwrap());
    }
    let mut worst = 0f64;
    let mut identity = true;
    for r in &reports {
        let expected = -10.0 * r.mse.log10();
        if expected.is_infinite() {
            identity &= r.psnr_db == f64::INFINITY && r.mse == 0.0;
        } else {
            worst = worst.max((r.psnr_db - expected).abs() / expected.abs().max(1.0));
        }
    }
    (
        identity && worst < 1e-12 && invariant,
        format!(
            "{} reports, worst PSNR identity error {worst:.1e}, out-of-mask invariance {invariant}",
            reports.len()
        ),
    )
}

fn c10_preprocess() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let cfg = PreprocessConfig::default();
    let mut inputs = vec![
        Volume::filled([5, 7, 3], [1.0, 1.0, 3.0], 42.0).unwrap(),
        Volume::filled([1, 1, 1], [0.6, 0.6, 4.5], -3.0).unwrap(),
        Volume::from_fn([300, 20, 40], [0.4, 2.5, 3.0], |i, j, k| (i * j + k) as f32 - 1e4).unwrap(),
    ];
    for _ in 0..6 {
        let dims = [
            rng.random_range(8..140),
            rng.random_range(8..140),
            rng.random_range(2..40),
        ];
        let spacing = [
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
            rng.random_range(1.0..8.0),
        ];
        let scale = 10f32.powi(rng.random_range(-2..5));
        let n = dims.iter().product();
        inputs.push(
            Volume::new(
                dims,
                spacing,
                (0..n).map(|_| scale * rng.random_range(-1.0..3.0f32)).collect(),
            )
            .unwrap(),
        );
    }
    let mut ok = true;
    for v in &inputs {
        let out = preprocess(v, &cfg).unwrap().volume;
        ok &= out.dims() == [256, 256, 32]
            && out.spacing() == [0.6, 0.6, 4.5]
            && out.data().iter().all(|x| (0.0..=1.0).contains(x));
    }
    (
        ok,
        format!(
            "{} synthetic inputs -> (256, 256, 32) at (0.6, 0.6, 4.5) mm, values in [0, 1]: {ok}",
            inputs.len()
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, started: Instant, (pass, detail): Outcome| {
        failed += (!pass) as usize;
        println!(
            "[{}] {id:>2} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    };
    let t = Instant::now();
    report(1, "wavelet round trip", t, c1_wavelet());
    let t = Instant::now();
    report(2, "schedule and posterior algebra", t, c2_schedule());
    let t = Instant::now();
    report(3, "forward-process statistics", t, c3_forward());
    let t = Instant::now();
    report(4, "gradient check", t, c4_gradient());
    let t = Instant::now();
    report(5, "oracle-denoiser inpainting", t, c5_oracle_inpaint());
    let t = Instant::now();
    report(6, "brute-force oracles", t, c6_oracles());
    let t = Instant::now();
    let (outcome, net) = c7_training();
    report(7, "desk-scale learning", t, outcome);
    let t = Instant::now();
    let mut reports = Vec::new();
    report(
        8,
        "directional groove change",
        t,
        c8_directional(net.as_ref(), &mut reports),
    );
    let t = Instant::now();
    report(9, "metric self-consistency", t, c9_metrics(reports));
    let t = Instant::now();
    report(10, "preprocessing contract", t, c10_preprocess());
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
