use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense `height × width × channels` array of `f64`, channel-interleaved
/// and row-major. Diffusion state, conditioning images and noise all use
/// this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn full(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Standard normal draws in storage order.
    pub fn randn(height: usize, width: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let data = (0..height * width * channels).map(|_| rng.sample(StandardNormal)).collect();
        Self { height, width, channels, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.height, self.width, self.channels)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn ensure_mask(&self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.pixel_count() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries for {} pixels",
                mask.len(),
                self.pixel_count()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
