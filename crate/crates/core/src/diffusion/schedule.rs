use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forward-process variances `β_1..β_T` with the derived `α_t = 1 − β_t`
/// and `ᾱ_t = ∏ α_s`. Index 0 is the clean data: `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear ramp from `beta_start` to `beta_end` inclusive. With `steps = 1`
    /// the single step uses `beta_start`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("at least one step is required".into()));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / span).collect()
        };
        Self::from_betas(betas)
    }

    /// Linear schedule whose end points are scaled by `1000 / steps`, so a
    /// short chain reaches roughly the same terminal `ᾱ_T` as the default
    /// 1000-step one.
    pub fn linear_rescaled(steps: usize) -> Result<Self> {
        let scale = 1000.0 / steps as f64;
        Self::linear(steps, DEFAULT_BETA_START * scale, DEFAULT_BETA_END * scale)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("at least one step is required".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidSchedule("every beta must lie in (0, 1)".into()));
        }
        if betas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule("betas must be strictly increasing".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for a in &alphas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    /// Total number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `α_t` for `1 ≤ t ≤ T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub(crate) fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::InvalidTimestep { t, lo, hi: self.steps() });
        }
        Ok(())
    }
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

/// Inference settings for the strided sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of strided inference steps `S`.
    pub steps: usize,
    /// Stochasticity `η ≥ 0`; zero makes sampling deterministic given `x_T`.
    pub eta: f64,
    /// Classifier-free guidance factor `β ≥ 0`.
    pub guidance_beta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 50, eta: 0.0, guidance_beta: 1.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.steps == 0 || self.steps > sched.steps() {
            return Err(Error::InvalidConfig(format!(
                "inference steps {} must be in 1..={}",
                self.steps,
                sched.steps()
            )));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.guidance_beta >= 0.0) || !self.guidance_beta.is_finite() {
            return Err(Error::InvalidConfig(format!("guidance beta must be >= 0, got {}", self.guidance_beta)));
        }
        Ok(())
    }

    /// Strided subsequence `τ_1 < … < τ_S = T` with `τ_i = round(i·T/S)`.
    pub fn timesteps(&self, total: usize) -> Vec<usize> {
        strided_timesteps(total, self.steps)
    }
}

pub fn strided_timesteps(total: usize, steps: usize) -> Vec<usize> {
    (1..=steps).map(|i| (2 * i * total + steps) / (2 * steps)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.1).is_err());
        let s = NoiseSchedule::linear(1, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1]);
        assert_eq!(s.alpha_bar(1), 0.9);
    }

    #[test]
    fn two_step_alpha_bars() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn default_terminal_alpha_bar_matches_log_sum() {
        let s = NoiseSchedule::default();
        // Independent route: exp(Σ ln(1 − β_t)) with β_t recomputed from the ramp.
        let log_sum: f64 = (0..1000).map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln()).sum();
        let oracle = log_sum.exp();
        assert!((s.alpha_bar(1000) - oracle).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.0358e-5).abs() < 1e-8, "{}", s.alpha_bar(1000));
    }

    #[test]
    fn ordering_violations_are_rejected() {
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn schedule_ratio_identity() {
        for s in [NoiseSchedule::default(), NoiseSchedule::linear_rescaled(50).unwrap()] {
            for t in 1..=s.steps() {
                let ratio = s.alpha_bar(t) / s.alpha_bar(t - 1);
                assert!((ratio - s.alpha(t)).abs() < 1e-12);
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn strided_steps_are_increasing_and_end_at_t() {
        for (total, steps) in [(1000, 50), (1000, 1000), (100, 7), (5, 4), (3, 2), (1, 1)] {
            let tau = strided_timesteps(total, steps);
            assert_eq!(tau.len(), steps);
            assert_eq!(*tau.last().unwrap(), total);
            assert!(tau[0] >= 1);
            assert!(tau.windows(2).all(|w| w[0] < w[1]), "{tau:?}");
        }
        assert_eq!(strided_timesteps(1000, 50)[..3], [20, 40, 60]);
    }
}
