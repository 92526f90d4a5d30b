//! A fast oracle and invariant suite that can run on an installed binary.
//!
//! Every check compares the library against a deliberately naive
//! reimplementation or an algebraic identity. The training-based checks are
//! left to the test suite; this one finishes in seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::denoiser::{DenoiserNet, NetConfig};
use crate::diffusion::{
    inpaint, p_sample_step, q_sample, standard_normal, ConditionedInput, FixedPrediction, ScheduleConfig,
};
use crate::error::Result;
use crate::masking::{dilate, erode, label_components, otsu::otsu_cut, Connectivity, StructuringElement};
use crate::metrics::{evaluate, psnr_from_mse, ssim_map, wilcoxon_signed_rank, SsimConfig};
use crate::preprocess::{preprocess, PreprocessConfig};
use crate::volume::{BinaryMask, Grid, Volume};
use crate::wavelet::{dwt3, idwt3, WaveletCoeffs};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestOptions {
    /// Random instances per oracle comparison.
    pub cases: usize,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions { cases: 100, seed: 0 }
    }
}

pub fn run(opts: &SelftestOptions) -> Vec<Check> {
    let checks: [(&'static str, fn(&SelftestOptions) -> Result<(bool, String)>); 12] = [
        ("wavelet round trip and energy", wavelet),
        ("schedule and posterior algebra", schedule),
        ("forward-process moments", forward_moments),
        ("loss gradient vs finite differences", gradient),
        ("oracle-denoiser inpainting", oracle_inpaint),
        ("otsu vs exhaustive search", otsu),
        ("morphology vs distance definition", morphology),
        ("components vs union-find", components),
        ("ssim vs direct windows", ssim),
        ("wilcoxon vs sign enumeration", wilcoxon),
        ("masked metric identities", metric_identities),
        ("preprocessing contract", preprocessing),
    ];
    checks
        .iter()
        .map(|(name, f)| match f(opts) {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

fn rng(opts: &SelftestOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_volume(dims: [usize; 3], rng: &mut impl Rng) -> Result<Volume> {
    let n = dims.iter().product();
    Volume::new(dims, [1.0; 3], (0..n).map(|_| rng.random::<f32>()).collect())
}

fn random_mask(dims: [usize; 3], spacing: [f64; 3], p: f64, rng: &mut impl Rng) -> Result<BinaryMask> {
    Ok(BinaryMask::from_fn(Grid::new(dims, spacing)?, |_, _, _| {
        rng.random_bool(p)
    }))
}

fn wavelet(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 1);
    let (mut worst_inf, mut worst_energy) = (0f64, 0f64);
    for _ in 0..opts.cases {
        let dims = [
            2 * rng.random_range(1..=16),
            2 * rng.random_range(1..=16),
            2 * rng.random_range(1..=4),
        ];
        let v = random_volume(dims, &mut rng)?;
        let c = dwt3(&v)?;
        let back = idwt3(&c)?;
        for (a, b) in v.data().iter().zip(back.data()) {
            worst_inf = worst_inf.max((a - b).abs() as f64);
        }
        let e: f64 = v.data().iter().map(|&x| (x as f64).powi(2)).sum();
        worst_energy = worst_energy.max((c.energy() - e).abs() / e);
    }
    Ok((
        worst_inf < 1e-5 && worst_energy < 1e-5,
        format!("max |error| {worst_inf:.2e}, energy error {worst_energy:.2e}"),
    ))
}

fn schedule(_: &SelftestOptions) -> Result<(bool, String)> {
    let cfg = ScheduleConfig::full();
    let s = cfg.build()?;
    // product of (1 - beta) by summing logs, independent of the table
    let log_sum: f64 = (0..cfg.steps)
        .map(|i| {
            let beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * i as f64 / (cfg.steps - 1) as f64;
            (-beta).ln_1p()
        })
        .sum();
    let reference = log_sum.exp();
    let rel = (s.alpha_bar(1000) - reference).abs() / reference;
    let p1 = s.posterior(1)?;
    let t1 = p1.variance == 0.0 && (p1.x0_coef - 1.0).abs() < 1e-12 && p1.xt_coef.abs() < 1e-12;
    let still = crate::diffusion::PosteriorCoeffs::new(0.0, 0.5)?;
    let b0 = still.variance == 0.0 && still.x0_coef == 0.0 && (still.xt_coef - 1.0).abs() < 1e-12;
    Ok((
        rel < 1e-3 && format!("{:.2e}", s.alpha_bar(1000)) == "4.04e-5" && t1 && b0,
        format!(
            "alpha_bar(1000) = {:.6e}, t=1 identity {t1}, beta=0 identity {b0}",
            s.alpha_bar(1000)
        ),
    ))
}

/// Mean and variance of one coefficient at four timesteps: eight tests at
/// the 3-sigma level, so about 2 % of seeds flag a deviation by chance.
fn forward_moments(opts: &SelftestOptions) -> Result<(bool, String)> {
    let s = ScheduleConfig::full().build()?;
    let mut rng = rng(opts, 3);
    let x0 = WaveletCoeffs::new([1, 1, 1], [1.0; 3], vec![0.7; 8])?;
    let draws = 10_000;
    let mut worst = 0f64;
    for t in [1, 250, 500, 1000] {
        let (mut sum, mut sq) = (0f64, 0f64);
        for _ in 0..draws {
            let eps = standard_normal(&x0, &mut rng);
            let v = q_sample(&x0, t, &eps, &s)?.data()[0] as f64;
            sum += v;
            sq += v * v;
        }
        let var = s.one_minus_alpha_bar(t);
        let n = draws as f64;
        let mean = sum / n;
        let emp_var = sq / n - mean * mean;
        let z_mean = (mean - s.alpha_bar(t).sqrt() * x0.data()[0] as f64) / (var / n).sqrt();
        let z_var = (emp_var - var) / (var * (2.0 / n).sqrt());
        worst = worst.max(z_mean.abs()).max(z_var.abs());
    }
    Ok((worst < 3.0, format!("largest deviation {worst:.2} standard errors")))
}

fn gradient(opts: &SelftestOptions) -> Result<(bool, String)> {
    let cfg = NetConfig {
        base_channels: 2,
        channel_mult: vec![1, 2],
        res_blocks: 1,
        time_embed_dim: 4,
        activation: crate::denoiser::Activation::Silu,
    };
    let mut rng = rng(opts, 4);
    let mut net = DenoiserNet::new(cfg, opts.seed)?;
    for p in net.params_mut() {
        *p = 0.3 * rng.random_range(-1.0..1.0);
    }
    for &b in &crate::wavelet::SPARSE_BANDS {
        net.output_bias_mut()[b] = 4.0;
    }
    let dims = [4, 4, 2];
    let mut coeffs = || {
        WaveletCoeffs::new(
            dims,
            [1.0; 3],
            (0..8 * 32).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    };
    let (x_t, m1, m2, x0) = (coeffs()?, coeffs()?, coeffs()?, coeffs()?);
    let input = ConditionedInput::new(&x_t, &m1, &m2, 9)?;
    net.zero_grad();
    net.backward(&input, &x0, 1.0)?;
    let analytic = net.gradient().to_vec();
    let h = 1e-4;
    let mut worst = 0f64;
    for i in 0..net.param_count() {
        let p = net.params()[i];
        net.params_mut()[i] = p + h;
        let up = net.loss(&input, &x0, 1.0)?;
        net.params_mut()[i] = p - h;
        let down = net.loss(&input, &x0, 1.0)?;
        net.params_mut()[i] = p;
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-7);
        worst = worst.max(rel);
    }
    Ok((
        worst < 1e-3,
        format!("{} parameters, worst relative error {worst:.2e}", net.param_count()),
    ))
}

fn oracle_inpaint(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 5);
    let dims = [16, 16, 4];
    let truth = random_volume(dims, &mut rng)?;
    let mask = random_mask(dims, [1.0; 3], 0.3, &mut rng)?;
    let corrupted = Volume::from_fn(
        dims,
        [1.0; 3],
        |i, j, k| if mask.get(i, j, k) { 0.0 } else { truth.get(i, j, k) },
    )?;
    let s = ScheduleConfig::desk().build()?;
    let out = inpaint(&corrupted, &mask, &FixedPrediction(dwt3(&truth)?), &s, &mut rng)?.output;
    let mut inside = 0f64;
    let mut outside_identical = true;
    for i in 0..truth.len() {
        if mask.is_set(i) {
            inside = inside.max((out.data()[i] - truth.data()[i]).abs() as f64);
        } else {
            outside_identical &= out.data()[i].to_bits() == corrupted.data()[i].to_bits();
        }
    }
    // a deterministic final step returns the prediction itself
    let x = dwt3(&truth)?;
    let step = p_sample_step(&x, &x, 1, &s, &mut rng)?;
    Ok((
        inside < 1e-4 && outside_identical && step == x,
        format!("max error in mask {inside:.2e}, outside bit-identical {outside_identical}"),
    ))
}

fn otsu(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 6);
    let mut mismatches = 0;
    for _ in 0..opts.cases {
        let bins = rng.random_range(2..=256);
        let counts: Vec<u64> = (0..bins)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0
                } else {
                    rng.random_range(0..50)
                }
            })
            .collect();
        // between-class variance from explicit class means, every cut
        let mut best: Option<(usize, f64)> = None;
        for k in 1..bins {
            let w0: f64 = counts[..k].iter().map(|&c| c as f64).sum();
            let w1: f64 = counts[k..].iter().map(|&c| c as f64).sum();
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let m0 = counts[..k]
                .iter()
                .enumerate()
                .map(|(i, &c)| i as f64 * c as f64)
                .sum::<f64>()
                / w0;
            let m1 = counts[k..]
                .iter()
                .enumerate()
                .map(|(i, &c)| (i + k) as f64 * c as f64)
                .sum::<f64>()
                / w1;
            let between = w0 * w1 * (m0 - m1).powi(2);
            let better = match best {
                None => true,
                Some((_, b)) => between > b * (1.0 + 1e-12),
            };
            if better {
                best = Some((k, between));
            }
        }
        if otsu_cut(&counts) != best.map(|b| b.0) {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches in {} histograms", opts.cases),
    ))
}

fn morphology(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 7);
    let mut mismatches = 0;
    for _ in 0..opts.cases {
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
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..3.0),
        ];
        let m = random_mask(dims, spacing, rng.random_range(0.1..0.7), &mut rng)?;
        let se = StructuringElement::ellipsoid(radius, spacing);
        let within = |p: [usize; 3], q: [isize; 3]| {
            (0..3)
                .map(|a| {
                    let d = (q[a] - p[a] as isize) as f64 * spacing[a];
                    if d == 0.0 {
                        0.0
                    } else {
                        (d / radius[a]).powi(2)
                    }
                })
                .sum::<f64>()
                <= 1.0 + 1e-9
        };
        let g = *m.grid();
        let reach: Vec<isize> = (0..3).map(|a| (radius[a] / spacing[a]).ceil() as isize + 1).collect();
        let dil = BinaryMask::from_fn(g, |i, j, k| {
            (0..g.len()).filter(|&q| m.is_set(q)).any(|q| {
                let c = g.coords(q);
                within([i, j, k], [c[0] as isize, c[1] as isize, c[2] as isize])
            })
        });
        let ero = BinaryMask::from_fn(g, |i, j, k| {
            let mut ok = m.get(i, j, k);
            for dk in -reach[2]..=reach[2] {
                for dj in -reach[1]..=reach[1] {
                    for di in -reach[0]..=reach[0] {
                        let q = [i as isize + di, j as isize + dj, k as isize + dk];
                        if !ok || !within([i, j, k], q) {
                            continue;
                        }
                        let inside = (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < dims[a]);
                        ok = inside && m.get(q[0] as usize, q[1] as usize, q[2] as usize);
                    }
                }
            }
            ok
        });
        if dilate(&m, &se) != dil || erode(&m, &se) != ero {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches in {} masks", opts.cases),
    ))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn components(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 8);
    let mut mismatches = 0;
    for case in 0..opts.cases {
        let dims = [
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        ];
        let m = random_mask(dims, [1.0; 3], rng.random_range(0.2..0.6), &mut rng)?;
        let conn = if case % 2 == 0 {
            Connectivity::Six
        } else {
            Connectivity::TwentySix
        };
        let g = *m.grid();
        let mut parent: Vec<usize> = (0..g.len()).collect();
        for a in 0..g.len() {
            for b in a + 1..g.len() {
                if !(m.is_set(a) && m.is_set(b)) {
                    continue;
                }
                let (p, q) = (g.coords(a), g.coords(b));
                let d: Vec<usize> = (0..3).map(|i| p[i].abs_diff(q[i])).collect();
                let adjacent = d.iter().all(|&x| x <= 1)
                    && match conn {
                        Connectivity::Six => d.iter().sum::<usize>() == 1,
                        Connectivity::TwentySix => true,
                    };
                if adjacent {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let comps = label_components(&m, conn);
        let mut same = true;
        for a in 0..g.len() {
            for b in 0..g.len() {
                if m.is_set(a) && m.is_set(b) {
                    let together = find(&mut parent, a) == find(&mut parent, b);
                    same &= together == (comps.labels[a] == comps.labels[b]);
                }
            }
            same &= (comps.labels[a] == 0) == !m.is_set(a);
        }
        if !same {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches in {} masks", opts.cases),
    ))
}

fn ssim(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 9);
    let cases = (opts.cases / 10).max(1);
    let mut worst = 0f64;
    for _ in 0..cases {
        let dims = [
            rng.random_range(7..=12),
            rng.random_range(7..=12),
            rng.random_range(7..=12),
        ];
        let (a, b) = (random_volume(dims, &mut rng)?, random_volume(dims, &mut rng)?);
        let cfg = SsimConfig::desk();
        let map = ssim_map(&a, &b, &cfg)?;
        let g = cfg.taps();
        let r = (cfg.window / 2) as isize;
        let mirror = |i: isize, n: usize| -> usize {
            let n = n as isize;
            (if i < 0 {
                -i - 1
            } else if i >= n {
                2 * n - i - 1
            } else {
                i
            }) as usize
        };
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let mut s = [0f64; 6];
                    for dk in -r..=r {
                        for dj in -r..=r {
                            for di in -r..=r {
                                let w = g[(di + r) as usize] * g[(dj + r) as usize] * g[(dk + r) as usize];
                                let p = [
                                    mirror(i as isize + di, dims[0]),
                                    mirror(j as isize + dj, dims[1]),
                                    mirror(k as isize + dk, dims[2]),
                                ];
                                let (x, y) = (a.get(p[0], p[1], p[2]) as f64, b.get(p[0], p[1], p[2]) as f64);
                                for (acc, v) in s.iter_mut().zip([1.0, x, y, x * x, y * y, x * y]) {
                                    *acc += w * v;
                                }
                            }
                        }
                    }
                    let (ux, uy) = (s[1] / s[0], s[2] / s[0]);
                    let (vx, vy, c) = (s[3] / s[0] - ux * ux, s[4] / s[0] - uy * uy, s[5] / s[0] - ux * uy);
                    let direct = ((2.0 * ux * uy + cfg.c1()) * (2.0 * c + cfg.c2()))
                        / ((ux * ux + uy * uy + cfg.c1()) * (vx + vy + cfg.c2()));
                    worst = worst.max((direct - map[a.grid().index(i, j, k)]).abs());
                }
            }
        }
    }
    Ok((
        worst < 1e-5,
        format!("{cases} volume pairs, worst difference {worst:.2e}"),
    ))
}

fn wilcoxon(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 10);
    let mut mismatches = 0;
    let mut tested = 0;
    for _ in 0..opts.cases {
        let n = rng.random_range(1..=10);
        let before: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
        let after: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
        let Ok(r) = wilcoxon_signed_rank(&before, &after) else {
            continue;
        };
        tested += 1;
        let d: Vec<f64> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| b - a)
            .filter(|&v| v != 0.0)
            .collect();
        // mid-ranks by counting
        let ranks: Vec<f64> = d
            .iter()
            .map(|x| {
                let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
                let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect();
        let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let m = d.len();
        let ge = (0u32..1 << m)
            .filter(|p| (0..m).filter(|&i| p >> i & 1 == 1).map(|i| ranks[i]).sum::<f64>() >= observed - 1e-9)
            .count();
        if (r.p_greater - ge as f64 / (1u64 << m) as f64).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches in {tested} paired samples"),
    ))
}

fn metric_identities(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 11);
    let dims = [10, 10, 8];
    let mut ok = true;
    for _ in 0..(opts.cases / 10).max(1) {
        let (a, b) = (random_volume(dims, &mut rng)?, random_volume(dims, &mut rng)?);
        let mut m = random_mask(dims, [1.0; 3], 0.3, &mut rng)?;
        m.set(0, 0, 0, true);
        let cfg = SsimConfig::desk();
        let r = evaluate(&a, &b, &m, &cfg)?;
        ok &= r.psnr_db == psnr_from_mse(r.mse);
        let scramble = |v: &Volume, rng: &mut ChaCha8Rng| {
            let data = v
                .data()
                .iter()
                .zip(m.data())
                .map(|(&x, &k)| if k == 1 { x } else { rng.random() })
                .collect();
            Volume::new(dims, [1.0; 3], data)
        };
        let (a2, b2) = (scramble(&a, &mut rng)?, scramble(&b, &mut rng)?);
        ok &= evaluate(&a2, &b2, &m, &cfg)? == r;
        ok &= evaluate(&a, &a, &m, &cfg)?.ssim == 1.0;
    }
    Ok((
        ok,
        format!("psnr identity, out-of-mask invariance and ssim(a, a) = 1: {ok}"),
    ))
}

fn preprocessing(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(opts, 12);
    let cfg = PreprocessConfig::default();
    let mut ok = true;
    for _ in 0..3 {
        let dims = [
            rng.random_range(20..120),
            rng.random_range(20..120),
            rng.random_range(4..24),
        ];
        let spacing = [
            rng.random_range(0.3..1.5),
            rng.random_range(0.3..1.5),
            rng.random_range(2.0..6.0),
        ];
        let n = dims.iter().product();
        let v = Volume::new(dims, spacing, (0..n).map(|_| rng.random_range(-50.0..1500.0)).collect())?;
        let out = preprocess(&v, &cfg)?.volume;
        ok &= out.dims() == [256, 256, 32]
            && out.spacing() == [0.6, 0.6, 4.5]
            && out.data().iter().all(|x| (0.0..=1.0).contains(x));
    }
    Ok((
        ok,
        "dims (256, 256, 32), spacing (0.6, 0.6, 4.5), values in [0, 1]".into(),
    ))
}
