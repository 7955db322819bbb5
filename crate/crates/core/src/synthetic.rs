//! Textured box rooms and the ground-truth frames rendered from them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose, RigidTransform, Vec3};
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::mesh::TriangleMesh;
use crate::raster::rasterize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WallPattern {
    Checker,
    Stripes,
    Gradient,
}

/// Axis-aligned room `[−w/2, w/2] × [−d/2, d/2] × [0, h]` (z up) seen by an
/// inward-looking ring of cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    /// Edge length of one texture cell (meters).
    pub cell: f64,
    pub pattern: WallPattern,
    pub ring_count: usize,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub look_at: [f64; 3],
    pub resolution: usize,
    /// Focal length in pixels.
    pub focal: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            width: 4.0,
            depth: 4.0,
            height: 2.5,
            cell: 0.5,
            pattern: WallPattern::Checker,
            ring_count: 10,
            ring_radius: 1.0,
            ring_height: 1.25,
            look_at: [0.0, 0.0, 1.25],
            resolution: 16,
            focal: 12.0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DegenerateScene(m));
        for (name, v) in [
            ("width", self.width),
            ("depth", self.depth),
            ("height", self.height),
            ("cell", self.cell),
            ("focal", self.focal),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.ring_radius >= 0.0) || !self.ring_height.is_finite() || !self.look_at.iter().all(|v| v.is_finite()) {
            return bad("ring geometry must be finite with radius >= 0".into());
        }
        if self.ring_count == 0 {
            return bad("ring needs at least one camera".into());
        }
        if self.resolution == 0 {
            return bad("resolution must be positive".into());
        }
        let cells = (self.width.max(self.depth).max(self.height) / self.cell).ceil();
        if cells > 4096.0 {
            return bad(format!("{cells} cells per side is too many"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.focal, self.resolution, self.resolution)
    }

    pub fn ring_poses(&self) -> Result<Vec<CameraPose>> {
        let target = Vec3::from(self.look_at);
        (0..self.ring_count)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / self.ring_count as f64;
                let eye = Vec3::new(
                    target.x + self.ring_radius * a.cos(),
                    target.y + self.ring_radius * a.sin(),
                    self.ring_height,
                );
                // A camera sitting on the target looks along +x instead.
                let aim = if (eye - target).norm() < 1e-9 { eye + Vec3::new(a.cos(), a.sin(), 0.0) } else { target };
                RigidTransform::look_at(eye, aim, Vec3::z()).map_err(|e| Error::DegenerateScene(e.to_string()))
            })
            .collect()
    }

    /// Cameras at random positions inside the room (at least `margin` from
    /// every wall, floor and ceiling) with random heading and mild pitch.
    pub fn random_poses(&self, count: usize, margin: f64, seed: u64) -> Result<Vec<CameraPose>> {
        let (hx, hy) = (self.width / 2.0 - margin, self.depth / 2.0 - margin);
        let (z0, z1) = (margin, self.height - margin);
        if !(hx > 0.0 && hy > 0.0 && z1 > z0) {
            return Err(Error::DegenerateScene(format!("margin {margin} leaves no room for cameras")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let eye = Vec3::new(rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), rng.gen_range(z0..z1));
                let yaw = rng.gen_range(0.0..2.0 * PI);
                let pitch: f64 = rng.gen_range(-0.3..0.3);
                let dir = Vec3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
                RigidTransform::look_at(eye, eye + dir, Vec3::z()).map_err(|e| Error::DegenerateScene(e.to_string()))
            })
            .collect()
    }
}

/// Two colors per surface drawn from the seed.
fn palette(rng: &mut ChaCha8Rng) -> [[f32; 3]; 2] {
    let mut c = || [0, 1, 2].map(|_| rng.gen_range(0.1f32..0.9));
    [c(), c()]
}

fn cell_color(pattern: WallPattern, pal: &[[f32; 3]; 2], i: usize, j: usize, ni: usize) -> [f32; 3] {
    match pattern {
        WallPattern::Checker => pal[(i + j) % 2],
        WallPattern::Stripes => pal[i % 2],
        WallPattern::Gradient => {
            let s = if ni > 1 { i as f32 / (ni - 1) as f32 } else { 0.0 };
            [0, 1, 2].map(|c| pal[0][c] + (pal[1][c] - pal[0][c]) * s)
        }
    }
}

/// Adds a rectangle `origin + s·u + t·v`, `s ∈ [0, su]`, `t ∈ [0, sv]`,
/// split into cells of side `cell`, each with its own four vertices.
#[allow(clippy::too_many_arguments)]
fn add_surface(
    mesh: &mut TriangleMesh,
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    su: f64,
    sv: f64,
    cell: f64,
    pattern: WallPattern,
    pal: &[[f32; 3]; 2],
) {
    let ni = (su / cell).ceil().max(1.0) as usize;
    let nj = (sv / cell).ceil().max(1.0) as usize;
    let at = |k: usize, n: usize, len: f64| if k == n { len } else { k as f64 * cell };
    for i in 0..ni {
        for j in 0..nj {
            let (s0, s1) = (at(i, ni, su), at(i + 1, ni, su));
            let (t0, t1) = (at(j, nj, sv), at(j + 1, nj, sv));
            let base = mesh.vertices.len() as u32;
            for (s, t) in [(s0, t0), (s1, t0), (s0, t1), (s1, t1)] {
                mesh.vertices.push(origin + u * s + v * t);
            }
            let color = cell_color(pattern, pal, i, j, ni);
            mesh.colors.extend([color; 4]);
            mesh.faces.push([base, base + 1, base + 2]);
            mesh.faces.push([base + 1, base + 3, base + 2]);
        }
    }
}

/// Ground-truth mesh of the room described by `spec`. The seed only affects
/// the colors.
pub fn room_mesh(spec: &SyntheticSceneSpec, seed: u64) -> Result<TriangleMesh> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, d, h) = (spec.width, spec.depth, spec.height);
    let (x0, y0) = (-w / 2.0, -d / 2.0);
    let (ex, ey, ez) = (Vec3::x(), Vec3::y(), Vec3::z());
    let surfaces = [
        (Vec3::new(x0, y0, 0.0), ex, ey, w, d),
        (Vec3::new(x0, y0, h), ex, ey, w, d),
        (Vec3::new(x0, y0, 0.0), ex, ez, w, h),
        (Vec3::new(x0, -y0, 0.0), ex, ez, w, h),
        (Vec3::new(x0, y0, 0.0), ey, ez, d, h),
        (Vec3::new(-x0, y0, 0.0), ey, ez, d, h),
    ];
    let mut mesh = TriangleMesh::default();
    for (o, u, v, su, sv) in surfaces {
        let pal = palette(&mut rng);
        add_surface(&mut mesh, o, u, v, su, sv, spec.cell, spec.pattern, &pal);
    }
    Ok(mesh)
}

/// A generated scene: ground-truth mesh, intrinsics and one rendered frame
/// per ring camera.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub mesh: TriangleMesh,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<(RgbdFrame, CameraPose)>,
}

pub fn gen_synthetic_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<SyntheticScene> {
    let mesh = room_mesh(spec, seed)?;
    let k = spec.intrinsics()?;
    let frames = render_views(&mesh, &k, &spec.ring_poses()?);
    Ok(SyntheticScene { mesh, intrinsics: k, frames })
}

pub fn render_views(mesh: &TriangleMesh, k: &CameraIntrinsics, poses: &[CameraPose]) -> Vec<(RgbdFrame, CameraPose)> {
    poses.iter().map(|p| (rasterize(mesh, k, p), p.clone())).collect()
}
