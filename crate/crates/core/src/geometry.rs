//! Back-projection of depth maps into meshes, rigid transforms, fusion and
//! voxel pooling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::camera::{unproject_pixel, CameraIntrinsics, CameraPose, RigidTransform, Vec3};
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackprojectConfig {
    /// Faces with any 3D edge longer than this are dropped (meters).
    pub max_edge_len: f64,
    /// Faces with any vertex closer to the camera than this are dropped (meters).
    pub min_depth: f64,
    /// Cell size used when pooling fused meshes (meters).
    pub voxel_size: f64,
}

impl Default for BackprojectConfig {
    fn default() -> Self {
        Self { max_edge_len: 0.1, min_depth: 0.1, voxel_size: 0.02 }
    }
}

impl BackprojectConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_edge_len", self.max_edge_len),
            ("min_depth", self.min_depth),
            ("voxel_size", self.voxel_size),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Lifts every valid pixel to a world-space vertex and connects neighbours
/// along the pixel grid.
///
/// Each 2×2 pixel block contributes triangles `(p00, p10, p01)` and
/// `(p10, p11, p01)` when all three corners are valid. Triangles touching a
/// vertex nearer than `min_depth` or having an edge longer than
/// `max_edge_len` are discarded.
pub fn backproject_frame(
    frame: &RgbdFrame,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    cfg: &BackprojectConfig,
) -> Result<TriangleMesh> {
    let (w, h) = (frame.width(), frame.height());
    if w != k.width || h != k.height {
        return Err(Error::ShapeMismatch(format!(
            "frame is {w}x{h}, intrinsics expect {}x{}",
            k.width, k.height
        )));
    }

    let mut index = vec![u32::MAX; w * h];
    let mut depth = Vec::new();
    let mut mesh = TriangleMesh::default();
    for y in 0..h {
        for x in 0..w {
            let px = frame.get(x, y);
            if !px.is_valid() {
                continue;
            }
            let d = f64::from(px.d);
            index[y * w + x] = mesh.vertices.len() as u32;
            mesh.vertices.push(unproject_pixel(x as f64, y as f64, d, k, pose)?);
            mesh.colors.push(px.rgb());
            depth.push(d);
        }
    }

    let max_sq = cfg.max_edge_len * cfg.max_edge_len;
    let keep = |tri: [u32; 3], mesh: &TriangleMesh| -> bool {
        if tri.iter().any(|&i| depth[i as usize] < cfg.min_depth) {
            return false;
        }
        let [a, b, c] = mesh.face_vertices(&tri);
        (b - a).norm_squared() <= max_sq && (c - b).norm_squared() <= max_sq && (a - c).norm_squared() <= max_sq
    };

    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let p00 = index[y * w + x];
            let p10 = index[y * w + x + 1];
            let p01 = index[(y + 1) * w + x];
            let p11 = index[(y + 1) * w + x + 1];
            for tri in [[p00, p10, p01], [p10, p11, p01]] {
                if tri.iter().all(|&i| i != u32::MAX) && keep(tri, &mesh) {
                    mesh.faces.push(tri);
                }
            }
        }
    }
    Ok(mesh)
}

/// Applies a rigid motion to every vertex. Colors and faces are untouched.
///
/// Non-rigid inputs are rejected when the [`RigidTransform`] is built, so
/// this cannot fail.
pub fn transform_mesh(mesh: &TriangleMesh, g: &RigidTransform) -> TriangleMesh {
    TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| g.apply(v)).collect(),
        colors: mesh.colors.clone(),
        faces: mesh.faces.clone(),
    }
}

/// Concatenates two meshes; `b`'s face indices are shifted past `a`'s vertices.
pub fn fuse_meshes(a: &TriangleMesh, b: &TriangleMesh) -> TriangleMesh {
    let mut out = a.clone();
    append_mesh(&mut out, b);
    out
}

pub(crate) fn append_mesh(dst: &mut TriangleMesh, src: &TriangleMesh) {
    let offset = dst.vertices.len() as u32;
    dst.vertices.extend_from_slice(&src.vertices);
    dst.colors.extend_from_slice(&src.colors);
    dst.faces.extend(src.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
}

/// Merges all vertices that fall into the same world-aligned cubic cell.
pub fn voxel_pool(mesh: &TriangleMesh, voxel_size: f64) -> Result<TriangleMesh> {
    voxel_pool_in_frame(mesh, voxel_size, &RigidTransform::identity())
}

/// Voxel pooling on a grid attached to `grid_frame` (cell `(i, j, k)` covers
/// `floor(grid_frame⁻¹·p / voxel_size)`).
///
/// Each occupied cell becomes one vertex at the centroid of its members,
/// carrying their mean color. Output vertices are ordered by the first input
/// vertex that hit the cell, faces are remapped, and faces that collapse
/// onto a repeated vertex are dropped.
pub fn voxel_pool_in_frame(mesh: &TriangleMesh, voxel_size: f64, grid_frame: &RigidTransform) -> Result<TriangleMesh> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::InvalidConfig(format!("voxel size must be positive, got {voxel_size}")));
    }

    struct Cell {
        pos: Vec3,
        rgb: [f64; 3],
        count: u32,
    }

    let mut cell_of: HashMap<[i64; 3], u32> = HashMap::with_capacity(mesh.vertices.len());
    let mut cells: Vec<Cell> = Vec::new();
    let mut remap = Vec::with_capacity(mesh.vertices.len());
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        let local = grid_frame.apply_inverse(v);
        let key = [
            (local.x / voxel_size).floor() as i64,
            (local.y / voxel_size).floor() as i64,
            (local.z / voxel_size).floor() as i64,
        ];
        let id = *cell_of.entry(key).or_insert_with(|| {
            cells.push(Cell { pos: Vec3::zeros(), rgb: [0.0; 3], count: 0 });
            (cells.len() - 1) as u32
        });
        let cell = &mut cells[id as usize];
        cell.pos += v;
        for (acc, ch) in cell.rgb.iter_mut().zip(c) {
            *acc += f64::from(*ch);
        }
        cell.count += 1;
        remap.push(id);
    }

    let mut out = TriangleMesh::default();
    for cell in &cells {
        let n = f64::from(cell.count);
        out.vertices.push(cell.pos / n);
        out.colors.push(cell.rgb.map(|s| ((s / n) as f32).clamp(0.0, 1.0)));
    }
    out.faces = mesh
        .faces
        .iter()
        .map(|f| f.map(|i| remap[i as usize]))
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Rgbd;
    use proptest::prelude::*;

    fn k2x2() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 0.5, 0.5, 2, 2).unwrap()
    }

    fn constant_frame(w: usize, h: usize, d: f32) -> RgbdFrame {
        RgbdFrame::from_pixels(w, h, vec![Rgbd::new(0.5, 0.25, 1.0, d); w * h]).unwrap()
    }

    #[test]
    fn all_invalid_frame_gives_empty_mesh() {
        let m = backproject_frame(&RgbdFrame::empty(2, 2), &k2x2(), &CameraPose::identity(), &Default::default())
            .unwrap();
        assert!(m.vertices.is_empty() && m.faces.is_empty());
    }

    #[test]
    fn two_by_two_block_yields_two_faces() {
        let m = backproject_frame(&constant_frame(2, 2, 1.0), &k2x2(), &CameraPose::identity(), &Default::default())
            .unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces, vec![[0, 1, 2], [1, 3, 2]]);
        // Neighbouring pixels are d / fx = 0.01 m apart.
        assert!(((m.vertices[1] - m.vertices[0]).norm() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn faces_near_the_camera_are_dropped() {
        let m = backproject_frame(&constant_frame(2, 2, 0.05), &k2x2(), &CameraPose::identity(), &Default::default())
            .unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert!(m.faces.is_empty());
    }

    #[test]
    fn long_edges_are_dropped() {
        let mut f = constant_frame(2, 2, 1.0);
        f.set(1, 1, Rgbd::new(0.5, 0.5, 0.5, 3.0));
        let m = backproject_frame(&f, &k2x2(), &CameraPose::identity(), &Default::default()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn partial_block_needs_three_valid_corners() {
        let mut f = constant_frame(2, 2, 1.0);
        f.set(0, 0, Rgbd::INVALID);
        let m = backproject_frame(&f, &k2x2(), &CameraPose::identity(), &Default::default()).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 2, 1]]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = backproject_frame(&constant_frame(3, 2, 1.0), &k2x2(), &CameraPose::identity(), &Default::default());
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    fn tri(offset: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::new(offset, 0.0, 0.0), Vec3::new(offset + 1.0, 0.0, 0.0), Vec3::new(offset, 1.0, 0.0)],
            vec![[0.1, 0.2, 0.3]; 3],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn fuse_offsets_second_mesh() {
        let fused = fuse_meshes(&tri(0.0), &tri(5.0));
        assert_eq!(fused.vertices.len(), 6);
        assert_eq!(fused.faces, vec![[0, 1, 2], [3, 4, 5]]);
        assert_eq!(fuse_meshes(&TriangleMesh::default(), &tri(1.0)), tri(1.0));
        assert_eq!(fuse_meshes(&tri(1.0), &TriangleMesh::default()), tri(1.0));
    }

    #[test]
    fn fuse_is_associative() {
        let (a, b, c) = (tri(0.0), tri(2.0), tri(4.0));
        assert_eq!(fuse_meshes(&fuse_meshes(&a, &b), &c), fuse_meshes(&a, &fuse_meshes(&b, &c)));
    }

    #[test]
    fn transform_examples() {
        let m = TriangleMesh::new(vec![Vec3::new(0.0, 0.0, 2.0)], vec![[1.0, 1.0, 1.0]], vec![]).unwrap();
        assert_eq!(transform_mesh(&m, &RigidTransform::identity()), m);
        let moved = transform_mesh(&m, &RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0)));
        assert_eq!(moved.vertices[0], Vec3::new(1.0, 0.0, 2.0));
        let g = RigidTransform::from_axis_angle(Vec3::new(0.3, -1.0, 0.2), 1.1, Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let back = transform_mesh(&transform_mesh(&m, &g), &g.inverse());
        assert!((back.vertices[0] - m.vertices[0]).norm() < 1e-9);
    }

    #[test]
    fn pooling_merges_points_in_one_cell() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.005, 0.0, 0.0)],
            vec![[0.0, 0.0, 0.0], [1.0, 0.5, 0.0]],
            vec![],
        )
        .unwrap();
        let p = voxel_pool(&m, 0.02).unwrap();
        assert_eq!(p.vertices, vec![Vec3::new(0.0025, 0.0, 0.0)]);
        assert_eq!(p.colors, vec![[0.5, 0.25, 0.0]]);
    }

    #[test]
    fn pooling_keeps_points_in_distinct_cells() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.03, 0.0, 0.0)],
            vec![[0.0; 3]; 2],
            vec![],
        )
        .unwrap();
        assert_eq!(voxel_pool(&m, 0.02).unwrap().vertices.len(), 2);
    }

    #[test]
    fn pooling_drops_collapsed_faces() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.001, 0.0, 0.0), Vec3::new(0.0, 0.5, 0.0), Vec3::new(0.5, 0.5, 0.0)],
            vec![[0.0; 3]; 4],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let p = voxel_pool(&m, 0.02).unwrap();
        assert_eq!(p.vertices.len(), 3);
        assert_eq!(p.faces, vec![[0, 2, 1]]);
        p.validate().unwrap();
        assert!(voxel_pool(&m, 0.0).is_err());
    }

    fn arb_mesh() -> impl Strategy<Value = TriangleMesh> {
        prop::collection::vec((prop::array::uniform3(-0.3f64..0.3), prop::array::uniform3(0.0f32..1.0)), 3..60)
            .prop_flat_map(|pts| {
                let n = pts.len() as u32;
                let faces = prop::collection::vec(prop::array::uniform3(0..n), 0..40);
                (Just(pts), faces)
            })
            .prop_map(|(pts, faces)| TriangleMesh {
                vertices: pts.iter().map(|(p, _)| Vec3::from(*p)).collect(),
                colors: pts.iter().map(|(_, c)| *c).collect(),
                faces: faces.into_iter().filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2]).collect(),
            })
    }

    proptest! {
        #[test]
        fn pooling_is_idempotent(mesh in arb_mesh(), voxel in 0.01f64..0.2) {
            let once = voxel_pool(&mesh, voxel).unwrap();
            let twice = voxel_pool(&once, voxel).unwrap();
            prop_assert!(once.vertices.len() <= mesh.vertices.len());
            prop_assert_eq!(once.vertices.len(), twice.vertices.len());
            for (a, b) in once.vertices.iter().zip(&twice.vertices) {
                prop_assert!((a - b).norm() <= 1e-12);
            }
            prop_assert_eq!(&once.faces, &twice.faces);
            once.validate().unwrap();
        }

        #[test]
        fn backprojection_is_se3_equivariant(
            depths in prop::collection::vec(0.5f32..3.0, 16),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.0f64..3.0,
            t in prop::array::uniform3(-4.0f64..4.0),
        ) {
            prop_assume!(Vec3::from(axis).norm() > 1e-3);
            let k = CameraIntrinsics::new(4.0, 4.0, 1.5, 1.5, 4, 4).unwrap();
            let frame = RgbdFrame::from_pixels(
                4, 4, depths.iter().map(|&d| Rgbd::new(0.5, 0.5, 0.5, d)).collect()
            ).unwrap();
            let pose = RigidTransform::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.4, Vec3::new(0.5, 0.0, 0.0)).unwrap();
            let g = RigidTransform::from_axis_angle(Vec3::from(axis), angle, Vec3::from(t)).unwrap();
            let cfg = BackprojectConfig { max_edge_len: 1.0, ..Default::default() };
            let a = transform_mesh(&backproject_frame(&frame, &k, &pose, &cfg).unwrap(), &g);
            let b = backproject_frame(&frame, &k, &g.compose(&pose), &cfg).unwrap();
            prop_assert_eq!(&a.faces, &b.faces);
            for (p, q) in a.vertices.iter().zip(&b.vertices) {
                prop_assert!((p - q).norm() < 1e-9);
            }
        }
    }
}
