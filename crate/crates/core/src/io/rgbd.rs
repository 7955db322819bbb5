//! `.rgbd` rasters: `"RGBD"`, then little-endian `u32` version, width and
//! height, then `width·height` interleaved `(r, g, b, d)` `f32` pixels in
//! row-major order from the top-left.

use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{Rgbd, RgbdFrame};

pub const RGBD_MAGIC: &[u8; 4] = b"RGBD";
pub const RGBD_VERSION: u32 = 1;
pub const RGBD_HEADER_LEN: usize = 16;

pub fn encode_rgbd(frame: &RgbdFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(RGBD_HEADER_LEN + frame.pixels().len() * 16);
    out.extend_from_slice(RGBD_MAGIC);
    out.extend_from_slice(&RGBD_VERSION.to_le_bytes());
    out.extend_from_slice(&(frame.width() as u32).to_le_bytes());
    out.extend_from_slice(&(frame.height() as u32).to_le_bytes());
    for p in frame.pixels() {
        for v in [p.r, p.g, p.b, p.d] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_rgbd(bytes: &[u8]) -> Result<RgbdFrame> {
    if bytes.len() < RGBD_HEADER_LEN {
        return Err(Error::MalformedFile(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != RGBD_MAGIC {
        return Err(Error::MalformedFile("bad magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != RGBD_VERSION {
        return Err(Error::MalformedFile(format!("unsupported version {version}")));
    }
    let (w, h) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let payload = &bytes[RGBD_HEADER_LEN..];
    let expected = w.checked_mul(h).and_then(|n| n.checked_mul(16));
    if expected != Some(payload.len()) {
        return Err(Error::MalformedFile(format!("{w}x{h} frame needs a different payload than {} bytes", payload.len())));
    }
    let pixels = payload
        .chunks_exact(16)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
            Rgbd::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    RgbdFrame::from_pixels(w, h, pixels).map_err(|e| Error::MalformedFile(e.to_string()))
}

pub fn write_rgbd(frame: &RgbdFrame, path: &Path) -> Result<()> {
    std::fs::write(path, encode_rgbd(frame))?;
    Ok(())
}

pub fn read_rgbd(path: &Path) -> Result<RgbdFrame> {
    decode_rgbd(&super::read_bytes(path)?)
}
