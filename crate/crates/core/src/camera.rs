//! Pinhole camera model.
//!
//! Poses are camera-to-world rigid transforms. In camera space the camera
//! looks along +Z, image x points right and image y points down. Pixel
//! coordinates are continuous with integer values at pixel centers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` for poses built in memory.
pub const RIGID_TOL: f64 = 1e-9;

/// Minimum camera depth accepted by [`project_point`].
pub const MIN_PROJECT_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be finite and positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be non-zero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A proper rigid motion `x ↦ R·x + t`.
///
/// Used both as a camera pose (camera-to-world) and as a free-standing
/// transform applied to meshes and trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

/// Camera-to-world extrinsics.
pub type CameraPose = RigidTransform;

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        Self::with_tolerance(rotation, translation, RIGID_TOL)
    }

    /// Like [`RigidTransform::new`] but with a caller-chosen orthonormality
    /// tolerance (file inputs are checked at 1e-6).
    pub fn with_tolerance(rotation: Mat3, translation: Vec3, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entries".into()));
        }
        let ortho_err = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if ortho_err > tol {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {ortho_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidTransform(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation }
    }

    /// Rotation about a unit axis by `angle` radians, followed by a translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidTransform("zero rotation axis".into()));
        }
        let unit = nalgebra::Unit::new_unchecked(axis / norm);
        let rotation = *nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix();
        Self::new(rotation, translation)
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world up
    /// direction (image y points away from it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidTransform("eye and target coincide".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidTransform("view direction is parallel to up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    /// Parses a row-major 4×4 matrix whose last row must be `0 0 0 1`.
    pub fn from_matrix4(m: &[[f64; 4]; 4], tol: f64) -> Result<Self> {
        let last = m[3];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::NonRigid(format!("last row is {last:?}, expected [0, 0, 0, 1]")));
        }
        let rotation = Mat3::new(
            m[0][0], m[0][1], m[0][2], //
            m[1][0], m[1][1], m[1][2], //
            m[2][0], m[2][1], m[2][2],
        );
        let translation = Vec3::new(m[0][3], m[1][3], m[2][3]);
        Self::with_tolerance(rotation, translation, tol).map_err(|e| match e {
            Error::InvalidTransform(msg) => Error::NonRigid(msg),
            other => other,
        })
    }

    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera center in world coordinates when used as a pose.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the inverse motion: `Rᵀ·(p − t)`.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.translation))
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Projects a world point into pixel coordinates. Returns `(u, v, z)` with
/// `z` the camera-space depth.
pub fn project_point(p: &Vec3, k: &CameraIntrinsics, pose: &CameraPose) -> Result<(f64, f64, f64)> {
    let pc = pose.apply_inverse(p);
    if !(pc.z > MIN_PROJECT_DEPTH) {
        return Err(Error::BehindCamera(pc.z));
    }
    let u = k.fx * pc.x / pc.z + k.cx;
    let v = k.fy * pc.y / pc.z + k.cy;
    Ok((u, v, pc.z))
}

/// Camera-space point for pixel `(u, v)` at depth `d`.
pub fn unproject_to_camera(u: f64, v: f64, d: f64, k: &CameraIntrinsics) -> Vec3 {
    Vec3::new((u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d)
}

/// Lifts pixel `(u, v)` with metric depth `d` to a world point.
pub fn unproject_pixel(u: f64, v: f64, d: f64, k: &CameraIntrinsics, pose: &CameraPose) -> Result<Vec3> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidDepth(d));
    }
    Ok(pose.apply(&unproject_to_camera(u, v, d, k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let (u, v, z) = project_point(&Vec3::new(0.0, 0.0, 2.0), &k100(), &CameraPose::identity()).unwrap();
        assert_eq!((u, v, z), (64.0, 64.0, 2.0));
    }

    #[test]
    fn off_axis_projection() {
        let (u, v, z) = project_point(&Vec3::new(2.0, 0.0, 2.0), &k100(), &CameraPose::identity()).unwrap();
        assert_eq!((u, v, z), (164.0, 64.0, 2.0));
    }

    #[test]
    fn camera_moved_forward() {
        let pose = CameraPose::from_translation(Vec3::new(0.0, 0.0, 1.0));
        let (u, v, z) = project_point(&Vec3::new(0.0, 0.0, 2.0), &k100(), &pose).unwrap();
        assert_eq!((u, v, z), (64.0, 64.0, 1.0));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let err = project_point(&Vec3::new(0.0, 0.0, -1.0), &k100(), &CameraPose::identity());
        assert!(matches!(err, Err(Error::BehindCamera(_))));
        let err = project_point(&Vec3::new(1.0, 0.0, 0.0), &k100(), &CameraPose::identity());
        assert!(matches!(err, Err(Error::BehindCamera(_))));
    }

    #[test]
    fn unproject_examples() {
        let id = CameraPose::identity();
        assert_eq!(unproject_pixel(64.0, 64.0, 2.0, &k100(), &id).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(unproject_pixel(164.0, 64.0, 2.0, &k100(), &id).unwrap(), Vec3::new(2.0, 0.0, 2.0));
        assert!(matches!(unproject_pixel(1.0, 1.0, 0.0, &k100(), &id), Err(Error::InvalidDepth(_))));
        assert!(matches!(unproject_pixel(1.0, 1.0, -3.0, &k100(), &id), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.99, 4, 4).is_ok());
    }

    #[test]
    fn rejects_reflections_and_shears() {
        let mut m = Mat3::identity();
        m[(0, 0)] = -1.0;
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
        let mut s = Mat3::identity();
        s[(0, 1)] = 0.1;
        assert!(RigidTransform::new(s, Vec3::zeros()).is_err());
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let pose = RigidTransform::look_at(
            Vec3::new(1.0, 2.0, 1.0),
            Vec3::new(4.0, -1.0, 1.5),
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let k = k100();
        let (u, v, _) = project_point(&Vec3::new(4.0, -1.0, 1.5), &k, &pose).unwrap();
        assert!((u - 64.0).abs() < 1e-9 && (v - 64.0).abs() < 1e-9);
        // Points above the target appear higher in the image (smaller v).
        let (_, v_up, _) = project_point(&Vec3::new(4.0, -1.0, 2.0), &k, &pose).unwrap();
        assert!(v_up < 64.0);
    }

    fn arb_pose() -> impl Strategy<Value = CameraPose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.0f64..3.0,
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter_map("zero axis", |(a, ang, t)| {
                RigidTransform::from_axis_angle(Vec3::from(a), ang, Vec3::from(t)).ok()
            })
    }

    proptest! {
        #[test]
        fn project_inverts_unproject(
            u in -50.0f64..200.0, v in -50.0f64..200.0, d in 0.05f64..20.0, pose in arb_pose()
        ) {
            let k = k100();
            let p = unproject_pixel(u, v, d, &k, &pose).unwrap();
            let (u2, v2, d2) = project_point(&p, &k, &pose).unwrap();
            prop_assert!((u2 - u).abs() < 1e-9, "du = {}", u2 - u);
            prop_assert!((v2 - v).abs() < 1e-9, "dv = {}", v2 - v);
            // Depth is recovered to a few ulps of d.
            prop_assert!((d2 - d).abs() < 1e-12 * d.max(1.0) * 8.0, "dd = {}", d2 - d);
        }

        #[test]
        fn unproject_is_pose_equivariant(
            u in 0.0f64..128.0, v in 0.0f64..128.0, d in 0.1f64..10.0,
            pose in arb_pose(), g in arb_pose()
        ) {
            let k = k100();
            let moved = unproject_pixel(u, v, d, &k, &g.compose(&pose)).unwrap();
            let base = g.apply(&unproject_pixel(u, v, d, &k, &pose).unwrap());
            prop_assert!((moved - base).norm() < 1e-9);
        }

        #[test]
        fn inverse_composes_to_identity(pose in arb_pose(), p in prop::array::uniform3(-10.0f64..10.0)) {
            let p = Vec3::from(p);
            let back = pose.inverse().apply(&pose.apply(&p));
            prop_assert!((back - p).norm() < 1e-9);
        }
    }
}
