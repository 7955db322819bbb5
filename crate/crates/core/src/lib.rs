pub mod camera;
pub mod cli;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod selftest;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
