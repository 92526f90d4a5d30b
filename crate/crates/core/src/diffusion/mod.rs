//! Forward noising, the x0-parameterized reverse step and the conditional
//! inpainting sampler, all in wavelet-coefficient space.

mod sampler;
mod schedule;

pub use sampler::{
    inpaint, inpaint_with, p_sample_step, q_sample, q_sample_with, standard_normal, ConditionedInput, Denoiser,
    FixedPrediction, InpaintOptions, Inpainting,
};
pub use schedule::{NoiseSchedule, PosteriorCoeffs, ScheduleConfig, ScheduleKind};
