//! Training loss: mean squared error over all coefficients plus an L1
//! penalty on the bands `hhh`, `hhl`, `hlh` and `lhh` of the prediction.
//!
//! Both terms are divided by the coefficient count `N`:
//!
//! ```text
//! L = (1/N) * sum (x0_hat - x0)^2 + lambda * (1/N) * sum_{sparse bands} |x0_hat|
//! ```
//!
//! which is the squared-L2-plus-L1 objective scaled by `1/N`, so the two
//! terms keep their relative weight at any volume size.

use crate::error::Result;
use crate::wavelet::{WaveletCoeffs, SPARSE_BANDS};

/// Mean-squared and L1 parts of the loss, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    /// Sum of absolute values over the sparse bands, divided by `N`.
    pub l1: f64,
}

impl LossParts {
    pub fn total(&self, lambda: f64) -> f64 {
        self.mse + lambda * self.l1
    }
}

fn is_sparse(band: usize) -> bool {
    SPARSE_BANDS.contains(&band)
}

pub(crate) fn parts_f64(pred: &[f64], target: &[f64], band_len: usize) -> LossParts {
    let n = pred.len() as f64;
    let mut sq = 0.0;
    let mut l1 = 0.0;
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        sq += (p - t) * (p - t);
        if is_sparse(i / band_len) {
            l1 += p.abs();
        }
    }
    LossParts {
        mse: sq / n,
        l1: l1 / n,
    }
}

pub(crate) fn loss_f64(pred: &[f64], target: &[f64], band_len: usize, lambda: f64) -> f64 {
    parts_f64(pred, target, band_len).total(lambda)
}

/// Loss and its gradient wrt the prediction. The L1 subgradient at 0 is 0.
pub(crate) fn loss_and_grad_f64(pred: &[f64], target: &[f64], band_len: usize, lambda: f64) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let grad = pred
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (&p, &t))| {
            let mut g = 2.0 * (p - t) / n;
            if is_sparse(i / band_len) && p != 0.0 {
                g += lambda * p.signum() / n;
            }
            g
        })
        .collect();
    (loss_f64(pred, target, band_len, lambda), grad)
}

/// The loss of a prediction against the clean coefficients.
pub fn loss(x0_hat: &WaveletCoeffs, x0: &WaveletCoeffs, lambda: f64) -> Result<f64> {
    Ok(loss_parts(x0_hat, x0)?.total(lambda))
}

pub fn loss_parts(x0_hat: &WaveletCoeffs, x0: &WaveletCoeffs) -> Result<LossParts> {
    x0_hat.ensure_same_layout(x0)?;
    let p: Vec<f64> = x0_hat.data().iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = x0.data().iter().map(|&v| v as f64).collect();
    Ok(parts_f64(&p, &t, x0.band_len()))
}
