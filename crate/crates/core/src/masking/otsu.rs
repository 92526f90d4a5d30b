//! Otsu's method on a fixed-width histogram.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub min: f64,
    pub bin_width: f64,
}

impl Histogram {
    /// Equal-width bins spanning `[min, max]`; the maximum lands in the last bin.
    pub fn build(values: &[f32], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
        }
        let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if values.is_empty() || !(hi > lo) {
            return Err(Error::Degenerate("histogram of a constant or empty input".into()));
        }
        let min = lo as f64;
        let bin_width = (hi as f64 - min) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = (((v as f64 - min) / bin_width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Histogram { counts, min, bin_width })
    }

    /// Lower edge of bin `k`.
    pub fn edge(&self, k: usize) -> f64 {
        self.min + k as f64 * self.bin_width
    }
}

/// Cut index `k` in `1..bins` maximizing the between-class variance of the
/// split `[0, k)` / `[k, bins)`. Ties go to the smallest `k`. Returns `None`
/// when fewer than two bins are occupied.
pub fn otsu_cut(counts: &[u64]) -> Option<usize> {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let weighted_total: f64 = counts.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best: Option<(usize, f64)> = None;
    let mut w0 = 0.0;
    let mut s0 = 0.0;
    for k in 1..counts.len() {
        w0 += counts[k - 1] as f64;
        s0 += (k - 1) as f64 * counts[k - 1] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mean_diff = s0 / w0 - (weighted_total - s0) / w1;
        let between = w0 * w1 * mean_diff * mean_diff;
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| k)
}

/// Otsu threshold of `values`: the lower edge of the first bin of the upper
/// class. Foreground is `value >= threshold`.
pub fn otsu_threshold_values(values: &[f32], bins: usize) -> Result<f32> {
    let hist = Histogram::build(values, bins)?;
    let k = otsu_cut(&hist.counts).ok_or_else(|| Error::Degenerate("all samples fall in one histogram bin".into()))?;
    Ok(hist.edge(k) as f32)
}

pub fn otsu_threshold(v: &crate::Volume, bins: usize) -> Result<f32> {
    otsu_threshold_values(v.data(), bins)
}
