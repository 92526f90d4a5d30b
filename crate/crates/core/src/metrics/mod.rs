//! Masked image-quality metrics and the Wilcoxon signed-rank test.
//!
//! All masked metrics look only at voxels with `m = 1`. SSIM first zeroes
//! every voxel outside the mask in both volumes, then averages the full SSIM
//! map over the mask. PSNR assumes a data range of 1.

mod quality;
mod wilcoxon;

pub use quality::{
    aggregate, evaluate, masked_mse, masked_psnr, masked_ssim, psnr_from_mse, ssim_map, Aggregate, MeanStd,
    MetricReport, SsimConfig,
};
pub use wilcoxon::{midranks, wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N};

use std::fmt::Write;

/// One row of a paired before/after table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRow {
    pub name: String,
    /// What was measured, e.g. `sulcus_angle_deg`.
    pub quantity: String,
    pub before: f64,
    pub after: f64,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long-format CSV with a `name,quantity,before,after,difference` header.
pub fn paired_csv(rows: &[PairedRow]) -> String {
    let mut out = String::from("name,quantity,before,after,difference\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.name),
            csv_field(&r.quantity),
            r.before,
            r.after,
            r.after - r.before
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows() {
        let row = |name: &str, q: &str, before, after| PairedRow {
            name: name.into(),
            quantity: q.into(),
            before,
            after,
        };
        let rows = [row("a", "sa", 160.0, 150.5), row("b,c", "tgd", 1.0, 2.0)];
        assert_eq!(
            paired_csv(&rows),
            "name,quantity,before,after,difference\na,sa,160,150.5,-9.5\n\"b,c\",tgd,1,2,1\n"
        );
    }
}
