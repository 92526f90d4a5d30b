//! Variance schedules and the closed-form coefficients derived from them.
//!
//! Timesteps are 1-based: `t = 1..=T`, with `alpha_bar(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

/// Serializable description of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    /// T = 1000, beta from 1e-4 to 0.02.
    pub fn full() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Linear,
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }

    /// T = 100 with endpoints chosen so that `alpha_bar(T)` stays near the
    /// full-scale value (a few times 1e-5).
    pub fn desk() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Linear,
            steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.kind {
            ScheduleKind::Linear => NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end),
        }
    }
}

/// Tables of beta, alpha and alpha-bar for `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    // 1 - alpha_bar, accumulated separately so that it stays accurate (and
    // exactly beta_1 at t = 1) instead of suffering cancellation
    one_minus_alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta_t = start + (t - 1) / (T - 1) * (end - start)`; `T = 1` uses `start`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + i as f64 / (steps - 1) as f64 * (beta_end - beta_start)
                }
            })
            .collect();
        NoiseSchedule::from_betas(betas)
    }

    /// Builds the tables from an explicit `beta_1..beta_T`, each in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut one_minus = Vec::with_capacity(betas.len());
        let (mut ab, mut om) = (1.0f64, 0.0f64);
        for &b in &betas {
            om += ab * b;
            ab *= 1.0 - b;
            alpha_bars.push(ab);
            one_minus.push(om);
        }
        Ok(NoiseSchedule {
            betas,
            alpha_bars,
            one_minus_alpha_bars: one_minus,
        })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Panics unless `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `1 - alpha_bar(t)`; `0` at `t = 0`.
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.one_minus_alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Scale factors of `x0` and the noise in `x_t = a * x0 + b * eps`.
    pub fn forward_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check(t)?;
        Ok((self.alpha_bar(t).sqrt(), self.one_minus_alpha_bar(t).sqrt()))
    }

    pub fn posterior(&self, t: usize) -> Result<PosteriorCoeffs> {
        self.check(t)?;
        PosteriorCoeffs::from_parts(self.beta(t), self.alpha_bar(t - 1), self.one_minus_alpha_bar(t - 1))
    }
}

/// Coefficients of the Gaussian posterior `q(x_{t-1} | x_t, x0)`:
/// `mean = x0_coef * x0 + xt_coef * x_t`, variance `variance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub x0_coef: f64,
    pub xt_coef: f64,
    pub variance: f64,
}

impl PosteriorCoeffs {
    /// Coefficients for one step with `beta_t` in `[0, 1)` following a prefix
    /// with cumulative product `alpha_bar_prev`. Unlike a [`NoiseSchedule`],
    /// this accepts `beta_t = 0`.
    pub fn new(beta_t: f64, alpha_bar_prev: f64) -> Result<Self> {
        PosteriorCoeffs::from_parts(beta_t, alpha_bar_prev, 1.0 - alpha_bar_prev)
    }

    fn from_parts(beta_t: f64, alpha_bar_prev: f64, one_minus_prev: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta_t) || !(0.0..=1.0).contains(&alpha_bar_prev) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= beta < 1 and 0 <= alpha_bar <= 1, got {beta_t} and {alpha_bar_prev}"
            )));
        }
        let one_minus_t = one_minus_prev + alpha_bar_prev * beta_t;
        if one_minus_t <= 0.0 {
            return Err(Error::Degenerate("posterior undefined when alpha_bar_t == 1".into()));
        }
        Ok(PosteriorCoeffs {
            x0_coef: alpha_bar_prev.sqrt() * beta_t / one_minus_t,
            xt_coef: (1.0 - beta_t).sqrt() * one_minus_prev / one_minus_t,
            variance: one_minus_prev / one_minus_t * beta_t,
        })
    }
}
