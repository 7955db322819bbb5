//! Noise schedules and sampling math: the forward process, ancestral and
//! strided DDIM updates, the visible-region merge used for inpainting,
//! classifier-free guidance, and the complete inpainting sample loop.

mod sampler;
mod schedule;

pub use sampler::{
    cfg_combine, ddim_sigma2, ddim_step, ddpm_step, forward_sample, guided_eps, inpaint_merge, inpaint_sample,
};
pub use schedule::{
    strided_timesteps, NoiseSchedule, SamplerConfig, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};
