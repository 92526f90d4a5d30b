//! Inpaints a dysplastic phantom with a denoiser that always predicts the
//! matching healthy phantom, then measures the groove before and after.
//!
//! cargo run --release --example oracle_inpaint

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trochlea::diffusion::{inpaint, FixedPrediction, ScheduleConfig};
use trochlea::masking::{inpainting_mask, MaskSpec, PatellaSearch};
use trochlea::metrics::{evaluate, SsimConfig};
use trochlea::phantom::{generate_phantom, measure_sulcus_angle, measurement_slice, PhantomSpec};
use trochlea::{dwt3, Result};

fn main() -> Result<()> {
    let healthy = generate_phantom(&PhantomSpec::with_groove(142.0, 5.6))?;
    let dysplastic = generate_phantom(&PhantomSpec::with_groove(165.0, 1.8))?;
    let (mask, kind) = inpainting_mask(&dysplastic.labels, &MaskSpec::desk(), &PatellaSearch::desk())?;
    println!("{kind:?} mask with {} voxels", mask.count());

    let oracle = FixedPrediction(dwt3(&healthy.volume)?);
    let schedule = ScheduleConfig::desk().build()?;
    let out = inpaint(
        &dysplastic.volume,
        &mask,
        &oracle,
        &schedule,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;

    let k = measurement_slice(&dysplastic.patella()).unwrap_or(dysplastic.volume.dims()[2] / 2);
    let before = measure_sulcus_angle(&dysplastic.volume, k)?;
    let after = measure_sulcus_angle(&out.output, k)?;
    println!(
        "sulcus angle {:.1} -> {:.1} deg, depth {:.2} -> {:.2} mm",
        before.sulcus_angle_deg, after.sulcus_angle_deg, before.groove_depth_mm, after.groove_depth_mm
    );
    let r = evaluate(&out.output, &healthy.volume, &mask, &SsimConfig::desk())?;
    println!(
        "against the healthy phantom: mse {:.2e}, psnr {:.1} dB, ssim {:.4}",
        r.mse, r.psnr_db, r.ssim
    );
    Ok(())
}
