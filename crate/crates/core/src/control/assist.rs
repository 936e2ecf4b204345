use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::geometry::{
    angle_between, rotate_towards, solve_alignment, AlignmentConstraint, OrientedBox, Pose, COMPOSITION_TOL,
};

/// AutoGrasp arrival: position error below this (meters).
pub const ARRIVAL_POSITION_TOL: f64 = 0.002;
/// AutoGrasp arrival: orientation error below this (radians, 1 degree).
pub const ARRIVAL_ANGLE_TOL: f64 = std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssistParams {
    /// Grasps kept per object after farthest-point sampling.
    pub grasps_per_object: usize,
    /// Rotation gain, radians per meter of user translation.
    pub kappa: f64,
    /// Largest assistive rotation per tick (radians).
    pub omega_max: f64,
    pub grasp_trigger_radius: f64,
    pub attach_radius: f64,
    /// AutoGrasp translation cap (meters per tick).
    pub auto_translation_cap: f64,
    /// AutoGrasp rotation cap (radians per tick); never above `omega_max`.
    pub auto_rotation_cap: f64,
    /// Ticks AutoGrasp may take before the episode is flagged as failed.
    pub auto_grasp_budget: u64,
}

impl Default for AssistParams {
    fn default() -> Self {
        Self {
            grasps_per_object: 8,
            kappa: 3.0,
            omega_max: 0.15,
            grasp_trigger_radius: 0.08,
            attach_radius: 0.05,
            auto_translation_cap: 0.01,
            auto_rotation_cap: 0.1,
            auto_grasp_budget: 200,
        }
    }
}

impl AssistParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let positive = [
            ("kappa", self.kappa),
            ("omega_max", self.omega_max),
            ("grasp_trigger_radius", self.grasp_trigger_radius),
            ("attach_radius", self.attach_radius),
            ("auto_translation_cap", self.auto_translation_cap),
            ("auto_rotation_cap", self.auto_rotation_cap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ControlError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.grasps_per_object == 0 {
            return Err(ControlError::InvalidParams("grasps_per_object must be positive".into()));
        }
        if self.auto_rotation_cap > self.omega_max {
            return Err(ControlError::InvalidParams("auto_rotation_cap exceeds omega_max".into()));
        }
        if self.auto_grasp_budget == 0 {
            return Err(ControlError::InvalidParams("auto_grasp_budget must be positive".into()));
        }
        Ok(())
    }
}

/// World-frame rotation `delta` with `delta * from = rotate_towards(from, to, step)`.
fn world_step_towards(from: &UnitQuaternion<f64>, to: &UnitQuaternion<f64>, step: f64) -> UnitQuaternion<f64> {
    if step <= 0.0 {
        return UnitQuaternion::identity();
    }
    let next = rotate_towards(from, to, step).expect("step is finite and positive");
    let delta = next * from.inverse();
    // Re-express as an exact axis-angle so the emitted angle is `step` up to rounding.
    match Unit::try_new(delta.imag(), 1e-15) {
        Some(axis) => {
            let axis = if delta.w < 0.0 { -axis } else { axis };
            UnitQuaternion::from_axis_angle(&axis, step)
        }
        None => UnitQuaternion::identity(),
    }
}

/// Rotation to pre-multiply onto the end-effector orientation this tick:
/// towards `target` by `min(kappa |u_h|, omega_max, remaining)`.
pub fn grasp_assist_step(eef: &Pose, target: &Pose, u_h: &Vector3<f64>, params: &AssistParams) -> UnitQuaternion<f64> {
    let remaining = angle_between(&eef.orientation, &target.orientation);
    let step = (params.kappa * u_h.norm()).min(params.omega_max).min(remaining);
    if !step.is_finite() || step <= 0.0 {
        return UnitQuaternion::identity();
    }
    world_step_towards(&eef.orientation, &target.orientation, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// True when applying this twist lands within the arrival tolerances.
    pub arrived: bool,
}

/// One capped step of the autonomous final approach towards `target`.
pub fn auto_grasp_step(eef: &Pose, target: &Pose, params: &AssistParams) -> Twist {
    let offset = target.position - eef.position;
    let dist = offset.norm();
    let translation = if dist > params.auto_translation_cap { offset * (params.auto_translation_cap / dist) } else { offset };
    let remaining = angle_between(&eef.orientation, &target.orientation);
    let rotation = world_step_towards(&eef.orientation, &target.orientation, remaining.min(params.auto_rotation_cap));
    let pos_err = (eef.position + translation - target.position).norm();
    let ang_err = angle_between(&(rotation * eef.orientation), &target.orientation);
    Twist { translation, rotation, arrived: pos_err < ARRIVAL_POSITION_TOL && ang_err < ARRIVAL_ANGLE_TOL }
}

/// End-effector orientation that would bring the held object into alignment
/// with `target_obb` under `constraints`. The position is left unchanged.
/// `None` means there is nothing to assist with.
pub fn interaction_assist_target(
    grasped_obb: &OrientedBox,
    target_obb: &OrientedBox,
    constraints: &[AlignmentConstraint],
    eef: &Pose,
) -> Option<Pose> {
    if constraints.is_empty() {
        return None;
    }
    let r = solve_alignment(constraints, &grasped_obb.axes, &target_obb.axes).ok()?;
    let rq = UnitQuaternion::from_rotation_matrix(&r);
    if crate::geometry::rotation_angle(&rq) <= COMPOSITION_TOL {
        return Some(*eef);
    }
    Some(Pose::new(eef.position, rq * eef.orientation))
}
