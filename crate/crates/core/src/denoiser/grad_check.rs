use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::TinyNet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn num_params(&self) -> usize;
    fn params_mut(&mut self) -> &mut [f64];
    fn loss(&self) -> Result<f64>;
    fn loss_and_grad(&self) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Index of the parameter with the largest relative error.
    pub worst_index: usize,
}

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as the
/// denominator so that parameters with vanishing gradient compare absolutely.
pub const REL_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient with central differences on `count`
/// parameters chosen at random (all of them if `count` exceeds the total).
pub fn grad_check(obj: &mut dyn Objective, count: usize, seed: u64) -> Result<GradCheckReport> {
    let n = obj.num_params();
    let (_, grad) = obj.loss_and_grad()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, n, count.min(n)).into_vec();
    let mut report = GradCheckReport { checked: picks.len(), max_rel_error: 0.0, max_abs_error: 0.0, worst_index: 0 };
    for i in picks {
        let orig = obj.params_mut()[i];
        obj.params_mut()[i] = orig + FD_STEP;
        let up = obj.loss()?;
        obj.params_mut()[i] = orig - FD_STEP;
        let down = obj.loss()?;
        obj.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let abs = (numeric - grad[i]).abs();
        let rel = abs / numeric.abs().max(grad[i].abs()).max(REL_FLOOR);
        if !rel.is_finite() {
            return Err(Error::NonFiniteInput(format!("gradient check produced {rel} at parameter {i}")));
        }
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Training loss of a [`TinyNet`] on fixed examples `(x_t, cond, t, ε)`,
/// averaged over the examples.
pub struct NetObjective {
    pub net: TinyNet,
    pub examples: Vec<(Tensor, Tensor, usize, Tensor)>,
}

impl Objective for NetObjective {
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (x, c, t, e) in &self.examples {
            total += self.net.loss(x, c, *t, e)?;
        }
        Ok(total / self.examples.len() as f64)
    }

    fn loss_and_grad(&self) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.num_params()];
        let w = 1.0 / self.examples.len() as f64;
        let mut total = 0.0;
        for (x, c, t, e) in &self.examples {
            total += self.net.loss_and_grad(x, c, *t, e, w, &mut grad)?;
        }
        Ok((total * w, grad))
    }
}

/// Mean squared error of a single dense layer `y = W·x + b` against targets.
pub struct LinearObjective {
    pub n_in: usize,
    pub n_out: usize,
    /// `W` row-major followed by `b`.
    pub params: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl LinearObjective {
    fn residuals(&self) -> Vec<Vec<f64>> {
        let (w, b) = self.params.split_at(self.n_in * self.n_out);
        self.inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, y)| {
                (0..self.n_out)
                    .map(|o| b[o] + (0..self.n_in).map(|i| w[o * self.n_in + i] * x[i]).sum::<f64>() - y[o])
                    .collect()
            })
            .collect()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.inputs.len() * self.n_out) as f64
    }
}

impl Objective for LinearObjective {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss(&self) -> Result<f64> {
        Ok(self.residuals().iter().flatten().map(|r| r * r).sum::<f64>() * self.scale())
    }

    fn loss_and_grad(&self) -> Result<(f64, Vec<f64>)> {
        let res = self.residuals();
        let s = self.scale();
        let mut g = vec![0.0; self.params.len()];
        let off = self.n_in * self.n_out;
        for (x, r) in self.inputs.iter().zip(&res) {
            for o in 0..self.n_out {
                let d = 2.0 * r[o] * s;
                g[off + o] += d;
                for i in 0..self.n_in {
                    g[o * self.n_in + i] += d * x[i];
                }
            }
        }
        Ok((res.iter().flatten().map(|r| r * r).sum::<f64>() * s, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::TinyNetConfig;
    use rand::Rng;

    fn linear(seed: u64, zero: bool) -> LinearObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_in, n_out) = (6, 4);
        let mut v = |k: usize| -> Vec<f64> { (0..k).map(|_| if zero { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect() };
        LinearObjective {
            n_in,
            n_out,
            params: v(n_in * n_out + n_out),
            inputs: (0..5).map(|_| v(n_in)).collect(),
            targets: (0..5).map(|_| v(n_out)).collect(),
        }
    }

    #[test]
    fn linear_layer_is_exact() {
        let r = grad_check(&mut linear(1, false), 1000, 2).unwrap();
        assert_eq!(r.checked, 28);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn zero_problem_has_zero_gradients() {
        let mut obj = linear(3, true);
        let (_, g) = obj.loss_and_grad().unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let r = grad_check(&mut obj, 100, 4).unwrap();
        assert_eq!(r.max_abs_error, 0.0);

        let cfg = TinyNetConfig { resolution: 8, ..TinyNetConfig::default() };
        let z = Tensor::zeros(8, 8, 4);
        let net = NetObjective { net: TinyNet::zeros(cfg).unwrap(), examples: vec![(z.clone(), z.clone(), 5, z)] };
        let (_, g) = net.loss_and_grad().unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_net_matches_finite_differences() {
        let cfg = TinyNetConfig { resolution: 8, base_channels: 4, mid_channels: 6, time_dim: 8, ..TinyNetConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ex = (0..2)
            .map(|k| {
                (Tensor::randn(8, 8, 4, &mut rng), Tensor::randn(8, 8, 4, &mut rng), 7 + 300 * k, Tensor::randn(8, 8, 4, &mut rng))
            })
            .collect();
        let mut obj = NetObjective { net: TinyNet::random(cfg, 11).unwrap(), examples: ex };
        let r = grad_check(&mut obj, 300, 12).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
