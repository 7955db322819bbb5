use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::TinyNet;
use crate::diffusion::{forward_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training pair: a clean normalized frame and its conditioning image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub target: Tensor,
    pub cond: Tensor,
}

impl TrainExample {
    /// Example whose condition is the null (all-zero) image.
    pub fn unconditional(target: Tensor) -> Self {
        let cond = target.zeros_like();
        Self { target, cond }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_final: f64,
    pub batch_size: usize,
    /// Number of optimizer updates.
    pub steps: usize,
    /// Probability of replacing the condition with the null image.
    pub cond_dropout: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_initial: 2e-3,
            lr_final: 2e-5,
            batch_size: 8,
            steps: 2000,
            cond_dropout: 0.1,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) || !self.lr_initial.is_finite() || !self.lr_final.is_finite() {
            return bad(format!("learning rates must be positive, got {} -> {}", self.lr_initial, self.lr_final));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return bad(format!("condition dropout {} must lie in [0, 1]", self.cond_dropout));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return bad("batch size and step count must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("gradient clip {c} must be positive"));
            }
        }
        Ok(())
    }

    /// Cosine annealing from `lr_initial` at step 0 to `lr_final` at the last step.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let frac = if self.steps > 1 { step as f64 / (self.steps - 1) as f64 } else { 0.0 };
        self.lr_final + 0.5 * (self.lr_initial - self.lr_final) * (1.0 + (PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of every step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// Mean loss over `range`, clamped to the recorded steps.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let end = range.end.min(self.losses.len());
        let s = &self.losses[range.start.min(end)..end];
        s.iter().sum::<f64>() / s.len() as f64
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains `net` in place on the noise-prediction objective
/// `‖ε_θ(√ᾱ_t·x0 + √(1−ᾱ_t)·ε, c, t) − ε‖²`.
///
/// Per sample the example index, `t ~ U{1..T}`, the dropout coin and `ε`
/// are drawn in that order from one ChaCha stream, so a run is fully
/// determined by the seed.
pub fn train(net: &mut TinyNet, data: &[TrainExample], cfg: &TrainConfig, sched: &NoiseSchedule) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.num_params());
    let mut grad = vec![0.0; net.num_params()];
    let mut losses = Vec::with_capacity(cfg.steps);
    let weight = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps {
        grad.fill(0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let ex = &data[rng.gen_range(0..data.len())];
            let t = rng.gen_range(1..=sched.steps());
            let drop = rng.gen::<f64>() < cfg.cond_dropout;
            let (h, w, c) = ex.target.shape();
            let eps = Tensor::randn(h, w, c, &mut rng);
            let x_t = forward_sample(&ex.target, t, &eps, sched)?;
            let null;
            let cond = if drop {
                null = ex.cond.zeros_like();
                &null
            } else {
                &ex.cond
            };
            loss += weight * net.loss_and_grad(&x_t, cond, t, &eps, weight, &mut grad)?;
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss });
        }
        if let Some(clip) = cfg.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        adam.step(net.params_mut(), &grad, cfg.learning_rate(step));
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::TinyNetConfig;

    fn small() -> TinyNetConfig {
        TinyNetConfig { resolution: 8, base_channels: 4, mid_channels: 8, time_dim: 8, ..TinyNetConfig::default() }
    }

    fn data(seed: u64) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|_| TrainExample { target: Tensor::randn(8, 8, 4, &mut rng), cond: Tensor::randn(8, 8, 4, &mut rng) })
            .collect()
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig { steps: 11, lr_initial: 1.0, lr_final: 0.1, ..TrainConfig::default() };
        assert_eq!(c.learning_rate(0), 1.0);
        assert!((c.learning_rate(10) - 0.1).abs() < 1e-15);
        assert!((c.learning_rate(5) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = TrainConfig { steps: 5, batch_size: 2, ..TrainConfig::default() };
        let s = NoiseSchedule::linear_rescaled(100).unwrap();
        let run = || {
            let mut net = TinyNet::new(small(), 1).unwrap();
            let r = train(&mut net, &data(2), &cfg, &s).unwrap();
            (net.params().to_vec(), r.losses)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn full_dropout_never_learns_the_condition() {
        let cfg = TrainConfig { steps: 20, batch_size: 2, cond_dropout: 1.0, ..TrainConfig::default() };
        let s = NoiseSchedule::linear_rescaled(100).unwrap();
        let mut net = TinyNet::new(small(), 1).unwrap();
        train(&mut net, &data(3), &cfg, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(8, 8, 4, &mut rng);
        let c = Tensor::randn(8, 8, 4, &mut rng);
        let cond = net.forward(&x, &c, 40).unwrap();
        assert_eq!(cond, net.forward(&x, &x.zeros_like(), 40).unwrap());
        assert!(cond.data.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let s = NoiseSchedule::default();
        let mut net = TinyNet::new(small(), 1).unwrap();
        assert!(train(&mut net, &[], &TrainConfig::default(), &s).is_err());
        let bad = TrainConfig { cond_dropout: 1.5, ..TrainConfig::default() };
        assert!(matches!(train(&mut net, &data(1), &bad, &s), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let s = NoiseSchedule::default();
        let mut net = TinyNet::new(small(), 1).unwrap();
        let mut d = data(5);
        d[0].target.data[0] = f64::INFINITY;
        d.truncate(1);
        let cfg = TrainConfig { steps: 3, batch_size: 1, ..TrainConfig::default() };
        assert!(matches!(train(&mut net, &d, &cfg, &s), Err(Error::TrainingDiverged { step: 0, .. })));
    }
}
