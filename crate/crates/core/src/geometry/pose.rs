use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{angle_between, unit_quaternion, GeometryError};

/// Rigid pose: position in meters and a unit-quaternion orientation.
///
/// Grasp poses use the gripper convention that the frame's +Z axis is the
/// approach direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Builds a pose from a position and a scalar-first `[w, x, y, z]` quaternion.
    pub fn from_wxyz(position: [f64; 3], wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        Ok(Self::new(Vector3::from(position), unit_quaternion(&q)?))
    }

    /// Scalar-first quaternion components.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: `other` expressed in this pose's frame, mapped to the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + self.orientation * other.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * v
    }

    /// Gripper approach direction in the parent frame (+Z of this frame).
    pub fn approach_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// Translational and rotational distance to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            (self.position - other.position).norm(),
            angle_between(&self.orientation, &other.orientation),
        )
    }

    /// Same grasp with the gripper turned half a revolution about its approach axis.
    ///
    /// Parallel-jaw grasps are symmetric under this flip, so both poses are
    /// equally valid targets.
    pub fn flip_about_approach(&self) -> Pose {
        let half_turn = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        Pose::new(self.position, self.orientation * half_turn)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

/// Standalone form of [`Pose::flip_about_approach`].
pub fn flip_about_approach(grasp: &Pose) -> Pose {
    grasp.flip_about_approach()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    position: [f64; 3],
    /// Scalar-first `[w, x, y, z]`.
    quaternion: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PoseRepr { position: self.position.into(), quaternion: self.wxyz() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        Pose::from_wxyz(repr.position, repr.quaternion).map_err(serde::de::Error::custom)
    }
}
