use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Up to this many non-zero differences the null distribution is enumerated
/// exactly; above it the normal approximation is used.
pub const EXACT_MAX_N: usize = 12;

/// Signed-rank test on the paired differences `d = before - after`.
///
/// `p_greater` is the one-sided p-value for "before tends to exceed after"
/// (large `w_plus`), `p_less` for the opposite direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`.
    pub statistic: f64,
    pub p_two_sided: f64,
    pub p_greater: f64,
    pub p_less: f64,
    pub exact: bool,
}

/// Ranks of `|d|`, starting at 1, with ties given their mid-rank.
pub fn midranks(abs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0.0; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    ranks
}

pub fn wilcoxon_signed_rank(before: &[f64], after: &[f64]) -> Result<WilcoxonResult> {
    if before.len() != after.len() {
        return Err(Error::Shape(format!(
            "{} values before but {} after",
            before.len(),
            after.len()
        )));
    }
    if before.iter().chain(after).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("paired values must be finite".into()));
    }
    let d: Vec<f64> = before
        .iter()
        .zip(after)
        .map(|(b, a)| b - a)
        .filter(|&d| d != 0.0)
        .collect();
    if d.is_empty() {
        return Err(Error::Degenerate("every paired difference is zero".into()));
    }
    let ranks = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let n = d.len();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_greater, p_less, exact) = if n <= EXACT_MAX_N {
        let (ge, le) = exact_tails(&ranks, w_plus);
        (ge, le, true)
    } else {
        let mean = total / 2.0;
        let mut var = (n * (n + 1) * (2 * n + 1)) as f64 / 24.0;
        for t in tie_sizes(&ranks) {
            var -= (t * t * t - t) / 48.0;
        }
        let z = (w_plus - mean) / var.sqrt();
        (normal_sf(z), normal_sf(-z), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
        p_greater,
        p_less,
        exact,
    })
}

/// `P(W+ >= w)` and `P(W+ <= w)` under the null, from the distribution of
/// the sum of randomly signed ranks. Ranks are doubled so that mid-ranks
/// stay integral.
fn exact_tails(ranks: &[f64], w: f64) -> (f64, f64) {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let target = (2.0 * w).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let ge: f64 = counts[target..].iter().sum();
    let le: f64 = counts[..=target].iter().sum();
    (ge / all, le / all)
}

fn tie_sizes(ranks: &[f64]) -> Vec<f64> {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        if j > 1 {
            out.push(j as f64);
        }
        i += j;
    }
    out
}

/// Upper tail of the standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}
