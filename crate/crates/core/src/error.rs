use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("behind-camera: point has camera depth {0}")]
    BehindCamera(f64),
    #[error("invalid-depth: {0}")]
    InvalidDepth(f64),
    #[error("invalid-transform: {0}")]
    InvalidTransform(String),
    #[error("invalid-intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid-schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid-timestep: {t} not in [{lo}, {hi}]")]
    InvalidTimestep { t: usize, lo: usize, hi: usize },
    #[error("invalid-eta: sigma^2 {sigma2} exceeds 1 - alpha_bar {limit}")]
    InvalidEta { sigma2: f64, limit: f64 },
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite-input: {0}")]
    NonFiniteInput(String),
    #[error("degenerate-timestep: alpha_bar is 1 at t = {0}")]
    DegenerateTimestep(usize),
    #[error("training-diverged at step {step}: loss {loss}")]
    TrainingDiverged { step: usize, loss: f64 },
    #[error("empty-mask: no valid pixels")]
    EmptyMask,
    #[error("too-small: {width}x{height} image is smaller than the {window}x{window} window")]
    TooSmall { width: usize, height: usize, window: usize },
    #[error("zero-area: mesh has no face with positive area")]
    ZeroArea,
    #[error("no-observations: at least one input frame is required")]
    NoObservations,
    #[error("invalid-mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid-frame: {0}")]
    InvalidFrame(String),
    #[error("malformed-file: {0}")]
    MalformedFile(String),
    #[error("dim-mismatch: frame {path} is {found:?}, intrinsics say {expected:?}")]
    DimMismatch { path: PathBuf, found: (usize, usize), expected: (usize, usize) },
    #[error("non-rigid: {0}")]
    NonRigid(String),
    #[error("missing-file: {0}")]
    MissingFile(PathBuf),
    #[error("degenerate-scene: {0}")]
    DegenerateScene(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
