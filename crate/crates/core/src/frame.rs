//! RGBD image container.
//!
//! A pixel is valid iff its depth is positive. Invalid pixels carry zeros in
//! all four channels, so the visibility mask is implied by the depth channel.

use crate::error::{Error, Result};

/// One pixel: color in `[0, 1]` and metric depth in meters (0 = invalid).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rgbd {
    pub r: f32,
    pub g: f32,
    pub b: f32,
    pub d: f32,
}

impl Rgbd {
    pub const INVALID: Rgbd = Rgbd { r: 0.0, g: 0.0, b: 0.0, d: 0.0 };

    pub fn new(r: f32, g: f32, b: f32, d: f32) -> Self {
        Self { r, g, b, d }
    }

    pub fn is_valid(&self) -> bool {
        self.d > 0.0
    }

    pub fn rgb(&self) -> [f32; 3] {
        [self.r, self.g, self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    width: usize,
    height: usize,
    pixels: Vec<Rgbd>,
}

impl RgbdFrame {
    /// All-invalid frame.
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![Rgbd::INVALID; width * height] }
    }

    /// Builds a frame from row-major pixels, enforcing the container
    /// invariants.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgbd>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        for (i, p) in pixels.iter().enumerate() {
            check_pixel(p).map_err(|msg| Error::InvalidFrame(format!("pixel {i}: {msg}")))?;
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgbd] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgbd {
        self.pixels[y * self.width + x]
    }

    /// Writes a pixel. Invalid depth forces the color to zero.
    pub fn set(&mut self, x: usize, y: usize, p: Rgbd) {
        let i = y * self.width + x;
        self.pixels[i] = if p.is_valid() { p } else { Rgbd::INVALID };
    }

    pub fn mask(&self) -> Vec<bool> {
        self.pixels.iter().map(Rgbd::is_valid).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_valid()).count()
    }
}

fn check_pixel(p: &Rgbd) -> std::result::Result<(), String> {
    let vals = [p.r, p.g, p.b, p.d];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    if p.d < 0.0 {
        return Err(format!("negative depth {}", p.d));
    }
    if [p.r, p.g, p.b].iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(format!("color {:?} outside [0, 1]", p.rgb()));
    }
    if p.d == 0.0 && (p.r != 0.0 || p.g != 0.0 || p.b != 0.0) {
        return Err("invalid pixel with non-zero color".into());
    }
    Ok(())
}
