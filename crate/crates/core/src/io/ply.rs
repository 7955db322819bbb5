//! ASCII PLY with per-vertex colors.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

fn quantize(c: f32) -> u8 {
    (f64::from(c).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ply(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        let _ = writeln!(s, "{} {} {} {} {} {}", v.x, v.y, v.z, quantize(c[0]), quantize(c[1]), quantize(c[2]));
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    std::fs::write(path, encode_ply(mesh))?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::MalformedFile(msg.into())
}

/// Parses the subset written by [`encode_ply`]: ASCII, a vertex element with
/// `x y z` optionally followed by `red green blue` bytes, then a face element
/// of triangles.
pub fn parse_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    if lines.next().map(str::trim) != Some("format ascii 1.0") {
        return Err(bad("only ascii 1.0 is supported"));
    }
    let (mut nv, mut nf) = (None, None);
    let mut vprops: Vec<String> = Vec::new();
    let mut current = "";
    loop {
        let line = lines.next().ok_or_else(|| bad("unterminated header"))?.trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] if nv.is_none() && nf.is_none() => {
                nv = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                current = "vertex";
            }
            ["element", "face", n] if nf.is_none() && nv.is_some() => {
                nf = Some(n.parse::<usize>().map_err(|_| bad("bad face count"))?);
                current = "face";
            }
            ["property", "list", _, _, "vertex_indices" | "vertex_index"] if current == "face" => {}
            ["property", _, name] if current == "vertex" => vprops.push((*name).to_string()),
            _ => return Err(bad(format!("unsupported header line {line:?}"))),
        }
    }
    let (nv, nf) = (nv.ok_or_else(|| bad("no vertex element"))?, nf.unwrap_or(0));
    let colored = match vprops.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "red", "green", "blue"] => true,
        other => return Err(bad(format!("unsupported vertex properties {other:?}"))),
    };
    // Counts come from the file; never reserve more than the text could hold.
    let cap = text.len() / 2;
    let mut vertices = Vec::with_capacity(nv.min(cap));
    let mut colors = Vec::with_capacity(nv.min(cap));
    for i in 0..nv {
        let line = lines.next().ok_or_else(|| bad(format!("missing vertex {i}")))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != if colored { 6 } else { 3 } {
            return Err(bad(format!("vertex {i} has {} fields", tok.len())));
        }
        let p = |j: usize| tok[j].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(format!("vertex {i}")));
        vertices.push(Vec3::new(p(0)?, p(1)?, p(2)?));
        let c = if colored {
            let q = |j: usize| tok[j].parse::<u8>().map(|v| f32::from(v) / 255.0).map_err(|_| bad(format!("vertex {i} color")));
            [q(3)?, q(4)?, q(5)?]
        } else {
            [0.0; 3]
        };
        colors.push(c);
    }
    let mut faces = Vec::with_capacity(nf.min(cap));
    for i in 0..nf {
        let line = lines.next().ok_or_else(|| bad(format!("missing face {i}")))?;
        let tok: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("face {i}")))?;
        match tok.as_slice() {
            [3, a, b, c] => faces.push([*a, *b, *c]),
            _ => return Err(bad(format!("face {i} is not a triangle"))),
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing data after the last face"));
    }
    TriangleMesh::new(vertices, colors, faces).map_err(|e| bad(e.to_string()))
}

pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let bytes = super::read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| bad(format!("{} is not UTF-8", path.display())))?;
    parse_ply(text)
}
