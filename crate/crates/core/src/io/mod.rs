//! File formats: raw RGBD rasters, JSON scene manifests, ASCII PLY meshes
//! and the JSON run configuration.

mod config;
mod ply;
mod rgbd;
mod scene;

pub use config::{read_config, RunConfig};
pub use ply::{encode_ply, parse_ply, read_ply, write_ply};
pub use rgbd::{decode_rgbd, encode_rgbd, read_rgbd, write_rgbd, RGBD_HEADER_LEN, RGBD_MAGIC, RGBD_VERSION};
pub use scene::{
    parse_manifest, read_manifest, read_scene, read_trajectory, write_scene, write_trajectory, FrameEntry,
    SceneManifest, EXTRINSIC_TOL,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Reads a whole file, reporting a missing path as such.
pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}
