use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::masking::apply_mask;
use crate::volume::{BinaryMask, Volume};
use crate::wavelet::{dwt3, idwt3, WaveletCoeffs};

/// Network input at one reverse step: the current sample and the two
/// conditioning transforms, 24 channels in total.
#[derive(Debug, Clone, Copy)]
pub struct ConditionedInput<'a> {
    pub x_t: &'a WaveletCoeffs,
    /// Transform of the masked image.
    pub cond_m1: &'a WaveletCoeffs,
    /// Transform of the mask.
    pub cond_m2: &'a WaveletCoeffs,
    pub t: usize,
}

impl<'a> ConditionedInput<'a> {
    pub const CHANNELS: usize = 24;

    pub fn new(
        x_t: &'a WaveletCoeffs,
        cond_m1: &'a WaveletCoeffs,
        cond_m2: &'a WaveletCoeffs,
        t: usize,
    ) -> Result<Self> {
        x_t.ensure_same_layout(cond_m1)?;
        x_t.ensure_same_layout(cond_m2)?;
        Ok(ConditionedInput {
            x_t,
            cond_m1,
            cond_m2,
            t,
        })
    }

    /// Channel `c` of the concatenation `(x_t, m1, m2)`.
    pub fn channel(&self, c: usize) -> &'a [f32] {
        match c / 8 {
            0 => self.x_t.band(c),
            1 => self.cond_m1.band(c - 8),
            2 => self.cond_m2.band(c - 16),
            _ => panic!("channel {c} out of range"),
        }
    }
}

/// Anything that predicts the clean coefficients `x0` from a conditioned input.
///
/// Implementations must be usable from several threads at once, since
/// independent inpainting runs may share one model.
pub trait Denoiser: Sync {
    fn predict_x0(&self, input: &ConditionedInput<'_>) -> Result<WaveletCoeffs>;
}

/// Ignores its input and returns fixed coefficients. With the transform of a
/// known volume this is the oracle that makes the sampler reproduce it.
#[derive(Debug, Clone)]
pub struct FixedPrediction(pub WaveletCoeffs);

impl Denoiser for FixedPrediction {
    fn predict_x0(&self, input: &ConditionedInput<'_>) -> Result<WaveletCoeffs> {
        input.x_t.ensure_same_layout(&self.0)?;
        Ok(self.0.clone())
    }
}

/// Standard normal coefficients with the layout of `like`, drawn band-major,
/// x fastest.
pub fn standard_normal(like: &WaveletCoeffs, rng: &mut impl Rng) -> WaveletCoeffs {
    let data = (0..like.data().len())
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    like.with_data(data).expect("normal draws are finite")
}

/// `x_t = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps` for an explicit
/// `alpha_bar` in `[0, 1]`.
pub fn q_sample_with(x0: &WaveletCoeffs, eps: &WaveletCoeffs, alpha_bar: f64) -> Result<WaveletCoeffs> {
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::InvalidArgument(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    mix(x0, eps, alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt())
}

/// Closed-form forward noising to step `t`.
pub fn q_sample(x0: &WaveletCoeffs, t: usize, eps: &WaveletCoeffs, s: &NoiseSchedule) -> Result<WaveletCoeffs> {
    let (a, b) = s.forward_coefficients(t)?;
    mix(x0, eps, a, b)
}

fn mix(x: &WaveletCoeffs, y: &WaveletCoeffs, a: f64, b: f64) -> Result<WaveletCoeffs> {
    x.ensure_same_layout(y)?;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &q)| (a * p as f64 + b * q as f64) as f32)
        .collect();
    x.with_data(data)
}

/// One reverse step: the posterior mean from `x_t` and the prediction, plus
/// scaled noise. At `t = 1` the variance is zero and nothing is drawn from `rng`.
pub fn p_sample_step(
    x_t: &WaveletCoeffs,
    x0_hat: &WaveletCoeffs,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<WaveletCoeffs> {
    let p = s.posterior(t)?;
    let mut mean = mix(x0_hat, x_t, p.x0_coef, p.xt_coef)?;
    if t > 1 {
        let sd = p.variance.sqrt();
        for v in mean.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v as f64 + sd * z) as f32;
        }
    }
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InpaintOptions {
    /// Clamp every predicted coefficient to `[lo, hi]` before the posterior step.
    pub clamp_x0: Option<(f32, f32)>,
    /// Hand `x_{t-1}` to the observer every this many steps (0 disables).
    pub snapshot_every: usize,
}

#[derive(Debug, Clone)]
pub struct Inpainting {
    /// Input outside the mask, generated voxels inside.
    pub output: Volume,
    /// The raw reconstruction of the final sample over the whole grid.
    pub generated: Volume,
}

/// Regenerates the voxels under `mask` conditioned on the rest of `v`.
pub fn inpaint<D: Denoiser + ?Sized>(
    v: &Volume,
    mask: &BinaryMask,
    denoiser: &D,
    s: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Inpainting> {
    inpaint_with(
        v,
        mask,
        denoiser,
        s,
        rng,
        &InpaintOptions::default(),
        &mut |_, _| Ok(()),
    )
}

/// [`inpaint`] with options. `observer(t, x)` receives the sample reached
/// after the step from `t` to `t - 1` according to `opts.snapshot_every`.
pub fn inpaint_with<D: Denoiser + ?Sized>(
    v: &Volume,
    mask: &BinaryMask,
    denoiser: &D,
    s: &NoiseSchedule,
    rng: &mut impl Rng,
    opts: &InpaintOptions,
    observer: &mut dyn FnMut(usize, &WaveletCoeffs) -> Result<()>,
) -> Result<Inpainting> {
    let m1 = apply_mask(v, mask)?;
    let cond_m1 = dwt3(&m1)?;
    let cond_m2 = dwt3(&mask.to_volume())?;
    let mut x = standard_normal(&cond_m1, rng);

    for t in (1..=s.steps()).rev() {
        let input = ConditionedInput::new(&x, &cond_m1, &cond_m2, t)?;
        let mut x0_hat = denoiser.predict_x0(&input)?;
        x.ensure_same_layout(&x0_hat)?;
        if let Some((lo, hi)) = opts.clamp_x0 {
            for c in x0_hat.data_mut() {
                *c = c.clamp(lo, hi);
            }
        }
        x = p_sample_step(&x, &x0_hat, t, s, rng)?;
        if opts.snapshot_every > 0 && (t - 1) % opts.snapshot_every == 0 {
            observer(t, &x)?;
        }
    }

    let generated = idwt3(&x)?;
    let data = m1
        .data()
        .iter()
        .zip(generated.data())
        .zip(mask.data())
        .map(|((&keep, &gen), &m)| if m != 0 { gen } else { keep })
        .collect();
    let output = Volume::new(v.dims(), v.spacing(), data)?;
    Ok(Inpainting { output, generated })
}
