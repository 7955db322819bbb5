//! `scene.json` manifests. A trajectory file uses the same schema with the
//! frame files left out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rgbd::{read_rgbd, write_rgbd};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::pipeline::Trajectory;

/// Tolerance on the orthonormality of manifest rotations.
pub const EXTRINSIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    /// Raster path relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Row-major camera-to-world matrix.
    pub extrinsic: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameEntry>,
}

impl SceneManifest {
    /// Validated intrinsics and poses.
    pub fn cameras(&self) -> Result<(CameraIntrinsics, Vec<CameraPose>)> {
        self.intrinsics.validate()?;
        let poses = self
            .frames
            .iter()
            .map(|f| CameraPose::from_matrix4(&f.extrinsic, EXTRINSIC_TOL))
            .collect::<Result<_>>()?;
        Ok((self.intrinsics, poses))
    }
}

/// Parses and validates a manifest without touching any frame files.
pub fn parse_manifest(text: &str) -> Result<SceneManifest> {
    let m: SceneManifest = serde_json::from_str(text)?;
    m.cameras()?;
    Ok(m)
}

pub fn read_manifest(path: &Path) -> Result<SceneManifest> {
    let bytes = super::read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::MalformedFile(format!("{} is not UTF-8", path.display())))?;
    parse_manifest(text)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads a manifest and all of its frames, checking every frame against the
/// intrinsics.
pub fn read_scene(path: &Path) -> Result<(SceneManifest, Vec<(RgbdFrame, CameraPose)>)> {
    let m = read_manifest(path)?;
    let (k, poses) = m.cameras()?;
    let dir = base_dir(path);
    let mut frames = Vec::with_capacity(m.frames.len());
    for (entry, pose) in m.frames.iter().zip(poses) {
        let file = entry
            .file
            .as_ref()
            .ok_or_else(|| Error::MalformedFile(format!("{}: scene frame without a file", path.display())))?;
        let fp = dir.join(file);
        let f = read_rgbd(&fp)?;
        if (f.width(), f.height()) != (k.width, k.height) {
            return Err(Error::DimMismatch { path: fp, found: (f.width(), f.height()), expected: (k.width, k.height) });
        }
        frames.push((f, pose));
    }
    Ok((m, frames))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let (intrinsics, poses) = read_manifest(path)?.cameras()?;
    Ok(Trajectory { intrinsics, poses })
}

fn write_json(path: &Path, m: &SceneManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes `frame_NNNN.rgbd` files next to `manifest` and the manifest itself.
pub fn write_scene(manifest: &Path, k: &CameraIntrinsics, frames: &[(RgbdFrame, CameraPose)]) -> Result<()> {
    let dir = base_dir(manifest);
    let mut entries = Vec::with_capacity(frames.len());
    for (i, (f, pose)) in frames.iter().enumerate() {
        let name = format!("frame_{i:04}.rgbd");
        write_rgbd(f, &dir.join(&name))?;
        entries.push(FrameEntry { file: Some(name), extrinsic: pose.to_matrix4() });
    }
    write_json(manifest, &SceneManifest { intrinsics: *k, frames: entries })
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let frames = traj.poses.iter().map(|p| FrameEntry { file: None, extrinsic: p.to_matrix4() }).collect();
    write_json(path, &SceneManifest { intrinsics: traj.intrinsics, frames })
}
