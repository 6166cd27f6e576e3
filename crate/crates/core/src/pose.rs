//! Rigid-body poses in SE(3).

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

/// Tolerance on `|q| - 1` accepted when a quaternion is read from outside.
pub const QUATERNION_NORM_TOL: f64 = 1e-9;

/// A rigid transform: rotate by `rotation`, then translate by `translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    /// Planar pose with yaw about +z.
    pub fn from_translation_yaw(translation: Vector3<f64>, yaw: f64) -> Self {
        Self::new(translation, UnitQuaternion::from_euler_angles(0.0, 0.0, yaw))
    }

    /// Builds a pose from `[w, x, y, z]`, rejecting quaternions whose norm is
    /// off by more than [`QUATERNION_NORM_TOL`] or that contain non-finite
    /// values. The components are kept bit-exact.
    pub fn from_parts(t: [f64; 3], q_wxyz: [f64; 4]) -> Result<Self, String> {
        if t.iter().chain(q_wxyz.iter()).any(|v| !v.is_finite()) {
            return Err("pose contains non-finite values".into());
        }
        let q = Quaternion::new(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(format!("quaternion norm {norm} is not 1"));
        }
        Ok(Self::new(
            Vector3::new(t[0], t[1], t[2]),
            UnitQuaternion::new_unchecked(q),
        ))
    }

    pub fn t_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn q_array(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = UnitQuaternion::new_normalize(*(self.rotation * other.rotation).quaternion());
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    /// Relative transform taking `self` to `other`: `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }

    /// Linear interpolation of translation and spherical interpolation of
    /// rotation, `s` in `[0, 1]`. `s == 0` returns `a` exactly and `s == 1`
    /// returns `b` exactly.
    pub fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
        if s == 0.0 {
            return *a;
        }
        if s == 1.0 {
            return *b;
        }
        let translation = a.translation + (b.translation - a.translation) * s;
        let rotation = a.rotation.try_slerp(&b.rotation, s, 1e-12).unwrap_or(a.rotation);
        Pose { translation, rotation }
    }

    pub fn is_finite(&self) -> bool {
        self.t_array()
            .iter()
            .chain(self.q_array().iter())
            .all(|v| v.is_finite())
    }
}
