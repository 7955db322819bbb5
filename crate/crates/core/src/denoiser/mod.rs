//! Noise estimators `ε(x_t, cond, t)`.
//!
//! Two closed-form oracles (point-mass and isotropic Gaussian data) serve as
//! exact references for the sampling math; [`TinyNet`] is a small trainable
//! UNet-style estimator with hand-written gradients.

mod checkpoint;
mod grad_check;
mod layers;
mod net;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use grad_check::{grad_check, GradCheckReport, LinearObjective, NetObjective, Objective};
pub use net::{ParamEntry, TinyNet, TinyNetConfig};
pub use train::{train, TrainConfig, TrainExample, TrainReport};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One evaluation request. The unconditional branch passes the null
/// condition, an all-zero image.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub x_t: &'a Tensor,
    pub cond: &'a Tensor,
    pub t: usize,
}

impl DenoiserInput<'_> {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        self.x_t.ensure_same_shape(self.cond, "denoiser condition")?;
        if self.t == 0 || self.t > total_steps {
            return Err(Error::InvalidTimestep { t: self.t, lo: 1, hi: total_steps });
        }
        if !self.x_t.is_finite() || !self.cond.is_finite() {
            return Err(Error::NonFiniteInput("denoiser input contains NaN or infinity".into()));
        }
        Ok(())
    }
}

pub trait Denoiser {
    /// Estimates the noise component of `input.x_t`. Output has the input's shape.
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<Tensor>;
}

/// `ε̂ = (x_t − √ᾱ_t·x0*)/√(1−ᾱ_t)`: the only noise consistent with data
/// fixed at `target`.
pub fn analytic_point_mass(x_t: &Tensor, t: usize, target: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    x_t.ensure_same_shape(target, "point-mass target")?;
    if t > sched.steps() {
        return Err(Error::InvalidTimestep { t, lo: 1, hi: sched.steps() });
    }
    let ab = sched.alpha_bar(t);
    if ab >= 1.0 {
        return Err(Error::DegenerateTimestep(t));
    }
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x_t.data.iter().zip(&target.data).map(|(x, x0)| (x - a * x0) / s).collect();
    Ok(Tensor { data, ..*x_t })
}

/// Minimum-MSE noise estimate for data `x0 ~ N(mean, std²·I)`.
///
/// `E[x0 | x_t] = (√ᾱ·s²·x_t + (1−ᾱ)·μ) / (ᾱ·s² + 1−ᾱ)`, and the noise is
/// recovered from it through the forward relation.
pub fn analytic_gaussian(x_t: &Tensor, t: usize, mean: f64, std: f64, sched: &NoiseSchedule) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(Error::InvalidConfig(format!("std must be >= 0, got {std}")));
    }
    if t > sched.steps() {
        return Err(Error::InvalidTimestep { t, lo: 1, hi: sched.steps() });
    }
    let ab = sched.alpha_bar(t);
    if ab >= 1.0 {
        return Err(Error::DegenerateTimestep(t));
    }
    let var = std * std;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let denom = ab * var + (1.0 - ab);
    let data = x_t
        .data
        .iter()
        .map(|x| {
            let post_mean = (a * var * x + (1.0 - ab) * mean) / denom;
            (x - a * post_mean) / s
        })
        .collect();
    Ok(Tensor { data, ..*x_t })
}

/// Oracle for data concentrated on a single image. Ignores the condition.
#[derive(Debug, Clone)]
pub struct PointMassDenoiser {
    target: Tensor,
    schedule: NoiseSchedule,
}

impl PointMassDenoiser {
    pub fn new(target: Tensor, schedule: NoiseSchedule) -> Self {
        Self { target, schedule }
    }

    pub fn target(&self) -> &Tensor {
        &self.target
    }
}

impl Denoiser for PointMassDenoiser {
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<Tensor> {
        input.validate(self.schedule.steps())?;
        analytic_point_mass(input.x_t, input.t, &self.target, &self.schedule)
    }
}

/// Oracle for i.i.d. Gaussian pixels `N(mean, std²)`. Ignores the condition.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    mean: f64,
    std: f64,
    schedule: NoiseSchedule,
}

impl GaussianDenoiser {
    pub fn new(mean: f64, std: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(std >= 0.0) || !mean.is_finite() {
            return Err(Error::InvalidConfig(format!("bad Gaussian oracle N({mean}, {std}^2)")));
        }
        Ok(Self { mean, std, schedule })
    }
}

impl Denoiser for GaussianDenoiser {
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<Tensor> {
        input.validate(self.schedule.steps())?;
        analytic_gaussian(input.x_t, input.t, self.mean, self.std, &self.schedule)
    }
}
