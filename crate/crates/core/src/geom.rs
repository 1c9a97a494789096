//! Shared geometry: rigid transforms, oriented boxes, and small linear-algebra
//! helpers used across the engine, alignment, and renderer.
//!
//! Conventions: meters, right-handed, z-up. Quaternions are stored and
//! serialized in (w, x, y, z) order.

use nalgebra::{Matrix3, Point3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid-body transform (rotation then translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build from (w, x, y, z) quaternion components and a translation.
    /// The quaternion is renormalized; callers that require the 1e-9 norm
    /// invariant should validate before calling.
    pub fn from_parts(quat_wxyz: [f64; 4], translation: [f64; 3]) -> Self {
        let q = Quaternion::new(quat_wxyz[0], quat_wxyz[1], quat_wxyz[2], quat_wxyz[3]);
        Self {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(translation[0], translation[1], translation[2]),
        }
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation: t,
        }
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.apply(&p.coords))
    }

    /// Rotate a direction vector (no translation).
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// self ∘ other: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.inverse();
        RigidTransform {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in radians of the relative transform self⁻¹∘other.
    pub fn rotation_error(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_error(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            quat_wxyz: [f64; 4],
            translation: [f64; 3],
        }
        Repr {
            quat_wxyz: self.quat_wxyz(),
            translation: self.translation.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            quat_wxyz: [f64; 4],
            translation: [f64; 3],
        }
        let r = Repr::deserialize(d)?;
        Ok(RigidTransform::from_parts(r.quat_wxyz, r.translation))
    }
}

/// Oriented bounding box used by the toy-packing success counter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub rotation_wxyz: [f64; 4],
}

impl OrientedBox {
    pub fn axis_aligned(center: [f64; 3], half_extents: [f64; 3]) -> Self {
        Self {
            center,
            half_extents,
            rotation_wxyz: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_parts(self.rotation_wxyz, self.center)
    }

    /// Boundary-inclusive containment test in the box frame.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.transform().inverse().apply(p);
        local.x.abs() <= self.half_extents[0]
            && local.y.abs() <= self.half_extents[1]
            && local.z.abs() <= self.half_extents[2]
    }
}

/// Count the points inside an oriented box (boundary inclusive).
pub fn particles_in_obb(points: &[Vector3<f64>], box_: &OrientedBox) -> usize {
    let inv = box_.transform().inverse();
    let h = box_.half_extents;
    points
        .iter()
        .filter(|p| {
            let c = inv.apply(p);
            c.x.abs() <= h[0] && c.y.abs() <= h[1] && c.z.abs() <= h[2]
        })
        .count()
}

/// Least-squares rigid transform mapping `src` onto `dst` (Kabsch/Procrustes).
/// Returns `None` when either set has fewer than the needed points or the
/// cross-covariance is too degenerate for a rotation solve.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<RigidTransform> {
    if src.len() != dst.len() || src.len() < 2 {
        return None;
    }
    let n = src.len() as f64;
    let c_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let c_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - c_src) * (b - c_dst).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut v = vt.transpose();
        v.set_column(2, &(-v.column(2)));
        r = v * u.transpose();
    }
    let t = c_dst - r * c_src;
    Some(RigidTransform::from_rotation_matrix(&r, t))
}

/// Weight-blended unit quaternion (sign-aligned to the first entry).
pub fn blend_quaternions(quats: &[UnitQuaternion<f64>], weights: &[f64]) -> UnitQuaternion<f64> {
    debug_assert_eq!(quats.len(), weights.len());
    if quats.is_empty() {
        return UnitQuaternion::identity();
    }
    let reference = quats[0].quaternion();
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (q, &w) in quats.iter().zip(weights) {
        let mut raw = *q.quaternion();
        if raw.dot(reference) < 0.0 {
            raw = -raw;
        }
        acc += raw * w;
    }
    if acc.norm() < 1e-12 {
        return quats[0];
    }
    Unit::new_normalize(acc)
}
