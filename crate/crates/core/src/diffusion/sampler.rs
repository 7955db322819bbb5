//! Reverse-process updates and the masked inpainting sampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::{NoiseSchedule, SamplerConfig};
use crate::denoiser::{Denoiser, DenoiserInput};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t, 1)?;
    x0.ensure_same_shape(eps, "forward_sample")?;
    Ok(forward_unchecked(x0, sched.alpha_bar(t), eps))
}

fn forward_unchecked(x0: &Tensor, alpha_bar: f64, eps: &Tensor) -> Tensor {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = x0.data.iter().zip(&eps.data).map(|(x, e)| a * x + b * e).collect();
    Tensor { data, ..*x0 }
}

/// One ancestral step `x_t → x_{t−1}` with the posterior variance
/// `σ_t² = (1−ᾱ_{t−1})/(1−ᾱ_t)·β_t`. The last step (`t = 1`) adds no noise.
pub fn ddpm_step(x_t: &Tensor, t: usize, eps_hat: &Tensor, noise: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t, 1)?;
    x_t.ensure_same_shape(eps_hat, "ddpm_step eps")?;
    x_t.ensure_same_shape(noise, "ddpm_step noise")?;
    let alpha = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let eps_coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let sigma = if t > 1 { ((1.0 - ab_prev) / (1.0 - ab) * sched.beta(t)).sqrt() } else { 0.0 };
    let data = x_t
        .data
        .iter()
        .zip(&eps_hat.data)
        .zip(&noise.data)
        .map(|((x, e), z)| {
            let mu = inv_sqrt_alpha * (x - eps_coef * e);
            if t > 1 {
                mu + sigma * z
            } else {
                mu
            }
        })
        .collect();
    Ok(Tensor { data, ..*x_t })
}

/// Variance of a strided step from `t` to `t_prev`:
/// `η·(1−ᾱ_prev)/(1−ᾱ_t)·(1 − ᾱ_t/ᾱ_prev)`.
///
/// The last factor is the effective `β` across the stride; it equals `β_t`
/// when `t_prev = t − 1`.
pub fn ddim_sigma2(t: usize, t_prev: usize, eta: f64, sched: &NoiseSchedule) -> f64 {
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    eta * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)
}

/// Strided DDIM update from `t` to `t_prev < t` (`t_prev = 0` lands on data).
pub fn ddim_step(
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor,
    noise: &Tensor,
    eta: f64,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_t(t, 1)?;
    if t_prev >= t {
        return Err(Error::InvalidTimestep { t: t_prev, lo: 0, hi: t - 1 });
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!("eta must be >= 0, got {eta}")));
    }
    x_t.ensure_same_shape(eps_hat, "ddim_step eps")?;
    x_t.ensure_same_shape(noise, "ddim_step noise")?;

    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let sigma2 = ddim_sigma2(t, t_prev, eta, sched);
    let limit = 1.0 - ab_prev;
    if sigma2 > limit {
        return Err(Error::InvalidEta { sigma2, limit });
    }
    let sigma = sigma2.sqrt();
    let dir = (limit - sigma2).max(0.0).sqrt();
    let (sqrt_ab, sqrt_one_minus_ab) = (ab.sqrt(), (1.0 - ab).sqrt());
    let sqrt_ab_prev = ab_prev.sqrt();

    let data = x_t
        .data
        .iter()
        .zip(&eps_hat.data)
        .zip(&noise.data)
        .map(|((x, e), z)| {
            let x0 = (x - sqrt_one_minus_ab * e) / sqrt_ab;
            let out = sqrt_ab_prev * x0 + dir * e;
            if sigma > 0.0 {
                out + sigma * z
            } else {
                out
            }
        })
        .collect();
    Ok(Tensor { data, ..*x_t })
}

/// Replaces the visible pixels of a reverse-step output with a fresh forward
/// sample of the known content at time `t`:
/// `x_t = (√ᾱ_t·x̂_0 + √(1−ᾱ_t)·ε_vis)⊙m + x_prev⊙(1−m)`.
pub fn inpaint_merge(
    x_prev_full: &Tensor,
    x0_hat: &Tensor,
    mask: &[bool],
    t: usize,
    eps_vis: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_t(t, 0)?;
    x_prev_full.ensure_same_shape(x0_hat, "inpaint_merge x0_hat")?;
    x_prev_full.ensure_same_shape(eps_vis, "inpaint_merge eps")?;
    x_prev_full.ensure_mask(mask)?;
    let visible = forward_unchecked(x0_hat, sched.alpha_bar(t), eps_vis);
    let c = x_prev_full.channels;
    let mut out = x_prev_full.clone();
    for (p, &m) in mask.iter().enumerate() {
        if m {
            out.data[p * c..(p + 1) * c].copy_from_slice(&visible.data[p * c..(p + 1) * c]);
        }
    }
    Ok(out)
}

/// Classifier-free guidance `ε̃ = ε_u + β·(ε_c − ε_u)`, evaluated as
/// `(1−β)·ε_u + β·ε_c` so that β = 0 and β = 1 reproduce the inputs exactly.
pub fn cfg_combine(eps_uncond: &Tensor, eps_cond: &Tensor, guidance_beta: f64) -> Result<Tensor> {
    eps_uncond.ensure_same_shape(eps_cond, "cfg_combine")?;
    let keep = 1.0 - guidance_beta;
    let data = eps_uncond
        .data
        .iter()
        .zip(&eps_cond.data)
        .map(|(u, c)| keep * u + guidance_beta * c)
        .collect();
    Ok(Tensor { data, ..*eps_uncond })
}

/// Guided noise estimate. Skips the evaluation whose guidance weight is zero.
pub fn guided_eps(
    denoiser: &dyn Denoiser,
    x_t: &Tensor,
    cond: &Tensor,
    null_cond: &Tensor,
    t: usize,
    guidance_beta: f64,
) -> Result<Tensor> {
    let eval = |c: &Tensor| denoiser.denoise(&DenoiserInput { x_t, cond: c, t });
    if guidance_beta == 0.0 {
        eval(null_cond)
    } else if guidance_beta == 1.0 {
        eval(cond)
    } else {
        cfg_combine(&eval(null_cond)?, &eval(cond)?, guidance_beta)
    }
}

/// Completes the invisible part of `x0_hat` (pixels where `mask` is false).
///
/// Starts from `x_T ~ N(0, I)` and walks the strided timesteps; each step
/// takes a guided DDIM update, then re-imposes the forward-diffused visible
/// content at the new time. Visible pixels of the result equal `x0_hat`
/// exactly. All randomness comes from one ChaCha stream seeded by `seed`,
/// drawn in a fixed order: `x_T`, then per step the update noise followed
/// by the visible-region noise.
pub fn inpaint_sample(
    denoiser: &dyn Denoiser,
    x0_hat: &Tensor,
    mask: &[bool],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    cfg.validate(sched)?;
    x0_hat.ensure_mask(mask)?;
    let c = x0_hat.channels;
    for (p, &m) in mask.iter().enumerate() {
        if !m && x0_hat.data[p * c..(p + 1) * c].iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidConfig(format!("conditioning image is non-zero at masked-out pixel {p}")));
        }
    }

    let (h, w) = (x0_hat.height, x0_hat.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let null_cond = x0_hat.zeros_like();
    let mut taus = vec![0];
    taus.extend(cfg.timesteps(sched.steps()));

    let mut x = Tensor::randn(h, w, c, &mut rng);
    for i in (1..taus.len()).rev() {
        let (t, t_prev) = (taus[i], taus[i - 1]);
        let eps = guided_eps(denoiser, &x, x0_hat, &null_cond, t, cfg.guidance_beta)?;
        let noise = Tensor::randn(h, w, c, &mut rng);
        let eps_vis = Tensor::randn(h, w, c, &mut rng);
        let stepped = ddim_step(&x, t, t_prev, &eps, &noise, cfg.eta, sched)?;
        x = inpaint_merge(&stepped, x0_hat, mask, t_prev, &eps_vis, sched)?;
    }

    for (p, &m) in mask.iter().enumerate() {
        if m {
            x.data[p * c..(p + 1) * c].copy_from_slice(&x0_hat.data[p * c..(p + 1) * c]);
        }
    }
    Ok(x)
}
