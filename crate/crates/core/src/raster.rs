//! Z-buffered perspective rasterization of colored triangle meshes.
//!
//! Screen positions are snapped to 1/65536 pixel and coverage is decided
//! with exact integer edge functions at pixel centers. A pixel is covered
//! when its center lies inside or on the boundary of a triangle; when two
//! triangles report the same depth the one drawn first wins. No backface
//! culling is done. Triangles are clipped against a near plane just in
//! front of the camera before projection.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose, Vec3};
use crate::error::{Error, Result};
use crate::frame::{Rgbd, RgbdFrame};
use crate::mesh::TriangleMesh;

/// Near clipping plane in camera space (meters).
pub const NEAR_PLANE: f64 = 1e-4;

const SUBPIXEL_BITS: u32 = 16;
const SUBPIXEL: i64 = 1 << SUBPIXEL_BITS;
// Beyond this many pixels from the origin a snapped coordinate is not
// guaranteed to keep edge products inside i128.
const MAX_SCREEN_COORD: f64 = (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderChunkConfig {
    pub chunk_size: usize,
}

impl Default for RenderChunkConfig {
    fn default() -> Self {
        Self { chunk_size: 7 }
    }
}

impl RenderChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vec3,
    rgb: [f64; 3],
}

impl ClipVertex {
    fn lerp(&self, other: &ClipVertex, s: f64) -> ClipVertex {
        ClipVertex {
            p: self.p + (other.p - self.p) * s,
            rgb: [0, 1, 2].map(|i| self.rgb[i] + (other.rgb[i] - self.rgb[i]) * s),
        }
    }
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: i64,
    y: i64,
    inv_z: f64,
    rgb: [f64; 3],
}

/// Renders `mesh` from camera `pose`. Pixels no triangle covers stay invalid.
pub fn rasterize(mesh: &TriangleMesh, k: &CameraIntrinsics, pose: &CameraPose) -> RgbdFrame {
    let (w, h) = (k.width, k.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut color = vec![[0.0f64; 3]; w * h];

    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.apply_inverse(v)).collect();

    let mut poly: Vec<ClipVertex> = Vec::with_capacity(4);
    for face in &mesh.faces {
        let tri = face.map(|i| ClipVertex {
            p: cam[i as usize],
            rgb: mesh.colors[i as usize].map(f64::from),
        });
        clip_near(&tri, &mut poly);
        if poly.len() < 3 {
            continue;
        }
        let Some(screen) = poly.iter().map(|v| to_screen(v, k)).collect::<Option<Vec<_>>>() else {
            continue;
        };
        for i in 1..screen.len() - 1 {
            draw_triangle([screen[0], screen[i], screen[i + 1]], w, h, &mut zbuf, &mut color);
        }
    }

    let mut frame = RgbdFrame::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if zbuf[i].is_finite() {
                let c = color[i].map(|v| (v as f32).clamp(0.0, 1.0));
                frame.set(x, y, Rgbd::new(c[0], c[1], c[2], zbuf[i] as f32));
            }
        }
    }
    frame
}

/// Sutherland–Hodgman against `z >= NEAR_PLANE`.
fn clip_near(tri: &[ClipVertex; 3], out: &mut Vec<ClipVertex>) {
    out.clear();
    if tri.iter().all(|v| v.p.z >= NEAR_PLANE) {
        out.extend_from_slice(tri);
        return;
    }
    for i in 0..3 {
        let a = &tri[i];
        let b = &tri[(i + 1) % 3];
        let a_in = a.p.z >= NEAR_PLANE;
        let b_in = b.p.z >= NEAR_PLANE;
        if a_in {
            out.push(*a);
        }
        if a_in != b_in {
            let s = (NEAR_PLANE - a.p.z) / (b.p.z - a.p.z);
            let mut v = a.lerp(b, s);
            v.p.z = NEAR_PLANE;
            out.push(v);
        }
    }
}

fn to_screen(v: &ClipVertex, k: &CameraIntrinsics) -> Option<ScreenVertex> {
    let sx = k.fx * v.p.x / v.p.z + k.cx;
    let sy = k.fy * v.p.y / v.p.z + k.cy;
    if !(sx.abs() < MAX_SCREEN_COORD && sy.abs() < MAX_SCREEN_COORD) {
        return None;
    }
    Some(ScreenVertex {
        x: (sx * SUBPIXEL as f64).round() as i64,
        y: (sy * SUBPIXEL as f64).round() as i64,
        inv_z: 1.0 / v.p.z,
        rgb: v.rgb,
    })
}

#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: i64, py: i64) -> i128 {
    (b.x - a.x) as i128 * (py - a.y) as i128 - (b.y - a.y) as i128 * (px - a.x) as i128
}

fn draw_triangle(tri: [ScreenVertex; 3], w: usize, h: usize, zbuf: &mut [f64], color: &mut [[f64; 3]]) {
    let [a, mut b, mut c] = tri;
    let mut area = edge(&a, &b, c.x, c.y);
    if area == 0 {
        return;
    }
    if area < 0 {
        std::mem::swap(&mut b, &mut c);
        area = -area;
    }

    let min_x = a.x.min(b.x).min(c.x);
    let max_x = a.x.max(b.x).max(c.x);
    let min_y = a.y.min(b.y).min(c.y);
    let max_y = a.y.max(b.y).max(c.y);
    let x0 = ((min_x + SUBPIXEL - 1).div_euclid(SUBPIXEL)).max(0);
    let x1 = max_x.div_euclid(SUBPIXEL).min(w as i64 - 1);
    let y0 = ((min_y + SUBPIXEL - 1).div_euclid(SUBPIXEL)).max(0);
    let y1 = max_y.div_euclid(SUBPIXEL).min(h as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }

    let area_f = area as f64;
    for py in y0..=y1 {
        let sy = py * SUBPIXEL;
        for px in x0..=x1 {
            let sx = px * SUBPIXEL;
            let ea = edge(&b, &c, sx, sy);
            let eb = edge(&c, &a, sx, sy);
            let ec = edge(&a, &b, sx, sy);
            if ea < 0 || eb < 0 || ec < 0 {
                continue;
            }
            let qa = ea as f64 / area_f * a.inv_z;
            let qb = eb as f64 / area_f * b.inv_z;
            let qc = ec as f64 / area_f * c.inv_z;
            let sum = qa + qb + qc;
            let z = 1.0 / sum;
            let i = py as usize * w + px as usize;
            if z < zbuf[i] {
                zbuf[i] = z;
                let (wa, wb, wc) = (qa / sum, qb / sum, qc / sum);
                color[i] = [0, 1, 2].map(|ch| wa * a.rgb[ch] + wb * b.rgb[ch] + wc * c.rgb[ch]);
            }
        }
    }
}

/// Picks up to `chunk_size` known frames whose camera centers are nearest
/// to `target`'s. Ties go to the lower index. Returned indices are sorted
/// ascending.
pub fn select_chunk(known_poses: &[CameraPose], target: &CameraPose, cfg: &RenderChunkConfig) -> Vec<usize> {
    let center = target.center();
    let mut order: Vec<(f64, usize)> = known_poses
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.center() - center).norm_squared(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = order.into_iter().take(cfg.chunk_size).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::RigidTransform;
    use crate::geometry::transform_mesh;

    fn k(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::centered(w as f64, w, h).unwrap()
    }

    #[test]
    fn empty_mesh_renders_nothing() {
        let f = rasterize(&TriangleMesh::default(), &k(8, 8), &CameraPose::identity());
        assert_eq!(f.valid_count(), 0);
    }

    #[test]
    fn frustum_filling_triangle_is_constant() {
        let m = TriangleMesh::new(
            vec![Vec3::new(-100.0, -100.0, 2.0), Vec3::new(100.0, -100.0, 2.0), Vec3::new(0.0, 300.0, 2.0)],
            vec![[1.0, 0.0, 0.0]; 3],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let f = rasterize(&m, &k(16, 12), &CameraPose::identity());
        assert!(f.pixels().iter().all(|p| *p == Rgbd::new(1.0, 0.0, 0.0, 2.0)));
    }

    #[test]
    fn nearer_triangle_wins() {
        let big = |z: f64| {
            vec![Vec3::new(-100.0, -100.0, z), Vec3::new(100.0, -100.0, z), Vec3::new(0.0, 300.0, z)]
        };
        let mut verts = big(3.0);
        verts.extend(big(2.0));
        let m = TriangleMesh::new(
            verts,
            vec![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let f = rasterize(&m, &k(8, 8), &CameraPose::identity());
        assert!(f.pixels().iter().all(|p| *p == Rgbd::new(0.0, 1.0, 0.0, 2.0)));
    }

    #[test]
    fn triangle_behind_camera_is_invisible_and_straddling_one_is_clipped() {
        let behind = TriangleMesh::new(
            vec![Vec3::new(-1.0, -1.0, -2.0), Vec3::new(1.0, -1.0, -2.0), Vec3::new(0.0, 1.0, -2.0)],
            vec![[1.0; 3]; 3],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(rasterize(&behind, &k(8, 8), &CameraPose::identity()).valid_count(), 0);

        // A floor plane y = 1 running from behind the camera to z = 10.
        let floor = TriangleMesh::new(
            vec![Vec3::new(-50.0, 1.0, -5.0), Vec3::new(50.0, 1.0, -5.0), Vec3::new(0.0, 1.0, 10.0)],
            vec![[1.0; 3]; 3],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let f = rasterize(&floor, &k(8, 8), &CameraPose::identity());
        assert!(f.valid_count() > 0);
        for y in 0..8 {
            for x in 0..8 {
                let p = f.get(x, y);
                if p.is_valid() {
                    // Depth along the floor: z = fy * 1 / (v - cy).
                    let expected = 8.0 / (y as f64 - 3.5);
                    assert!((f64::from(p.d) - expected).abs() < 1e-5 * expected);
                }
            }
        }
    }

    #[test]
    fn rigid_motion_of_mesh_and_camera_is_invisible() {
        let m = TriangleMesh::new(
            vec![
                Vec3::new(-0.7, -0.4, 2.0),
                Vec3::new(0.8, -0.3, 2.5),
                Vec3::new(0.1, 0.9, 3.0),
                Vec3::new(-0.2, 0.1, 1.5),
            ],
            vec![[0.9, 0.1, 0.2], [0.1, 0.8, 0.3], [0.2, 0.3, 0.7], [0.5, 0.5, 0.5]],
            vec![[0, 1, 2], [0, 3, 1]],
        )
        .unwrap();
        let kk = k(24, 24);
        let pose = RigidTransform::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.1, Vec3::new(0.05, 0.0, 0.0)).unwrap();
        let g = RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, -0.5), 2.0, Vec3::new(3.0, -1.0, 0.5)).unwrap();
        let a = rasterize(&m, &kk, &pose);
        let b = rasterize(&transform_mesh(&m, &g), &kk, &g.compose(&pose));
        assert!(a.valid_count() > 50);
        for (p, q) in a.pixels().iter().zip(b.pixels()) {
            assert_eq!(p.rgb(), q.rgb());
            assert!((p.d - q.d).abs() <= 1e-6);
        }
    }

    fn ring(n: usize) -> Vec<CameraPose> {
        (0..n).map(|i| CameraPose::from_translation(Vec3::new(i as f64, 0.0, 0.0))).collect()
    }

    #[test]
    fn chunk_returns_all_when_few_frames() {
        assert_eq!(select_chunk(&ring(3), &CameraPose::identity(), &RenderChunkConfig::default()), vec![0, 1, 2]);
    }

    #[test]
    fn chunk_picks_nearest() {
        let poses = vec![
            CameraPose::from_translation(Vec3::new(3.0, 0.0, 0.0)),
            CameraPose::from_translation(Vec3::new(0.0, 1.0, 0.0)),
            CameraPose::from_translation(Vec3::new(0.0, 0.0, 2.0)),
        ];
        let got = select_chunk(&poses, &CameraPose::identity(), &RenderChunkConfig { chunk_size: 2 });
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn chunk_tie_goes_to_lower_index() {
        let poses = vec![
            CameraPose::from_translation(Vec3::new(-1.0, 0.0, 0.0)),
            CameraPose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        ];
        let got = select_chunk(&poses, &CameraPose::identity(), &RenderChunkConfig { chunk_size: 1 });
        assert_eq!(got, vec![0]);
    }
}
