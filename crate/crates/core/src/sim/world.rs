use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scenario::Scene;
use super::tasks::check_success;
use crate::control::GripperAction;
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperState {
    Open,
    Closed,
}

/// Rigid grasp: the object's pose is `eef * relative` while held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub object: usize,
    pub relative: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub eef: Pose,
    pub gripper: GripperState,
    pub attached: Option<Attachment>,
    /// Object frame poses in scene order.
    pub objects: Vec<Pose>,
    /// One flag per declared task.
    pub success: Vec<bool>,
}

/// Things that happened during a world step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    Attach { object: usize },
    Detach { object: usize },
    Success { task: usize },
}

impl WorldState {
    /// SHA-256 over the exact bit patterns of the state.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        let put_pose = |h: &mut Sha256, p: &Pose| {
            for v in p.position.iter().chain(p.orientation.coords.iter()) {
                h.update(v.to_bits().to_le_bytes());
            }
        };
        h.update(self.tick.to_le_bytes());
        put_pose(&mut h, &self.eef);
        h.update([matches!(self.gripper, GripperState::Closed) as u8]);
        match &self.attached {
            Some(a) => {
                h.update([1]);
                h.update((a.object as u64).to_le_bytes());
                put_pose(&mut h, &a.relative);
            }
            None => h.update([0]),
        }
        for p in &self.objects {
            put_pose(&mut h, p);
        }
        for s in &self.success {
            h.update([*s as u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn attached_object(&self) -> Option<usize> {
        self.attached.map(|a| a.object)
    }
}

/// Advances the world one tick.
///
/// The end-effector translates by `translation` (clamped to the workspace)
/// and its orientation is pre-multiplied by `u_r`. A close command grasps
/// the object whose box is nearest the end-effector if it lies within the
/// attach radius; an open command releases. Held objects follow exactly.
pub fn world_step(
    scene: &Scene,
    state: &WorldState,
    translation: &Vector3<f64>,
    u_r: &UnitQuaternion<f64>,
    gripper: GripperAction,
) -> (WorldState, Vec<WorldEvent>) {
    let mut next = state.clone();
    let mut events = Vec::new();
    next.tick += 1;
    next.eef.position = scene.spec.workspace.clamp(&(state.eef.position + translation));
    next.eef.orientation = UnitQuaternion::new_normalize((u_r * state.eef.orientation).into_inner());

    match gripper {
        GripperAction::Close if next.gripper == GripperState::Open => {
            next.gripper = GripperState::Closed;
            let nearest = scene
                .objects
                .iter()
                .zip(&next.objects)
                .enumerate()
                .map(|(i, (o, pose))| (i, o.world_obb(pose).distance_to_point(&next.eef.position)))
                .filter(|(_, d)| *d <= scene.spec.attach_radius)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((object, _)) = nearest {
                let relative = next.eef.inverse().compose(&next.objects[object]);
                next.attached = Some(Attachment { object, relative });
                events.push(WorldEvent::Attach { object });
            }
        }
        GripperAction::Open if next.gripper == GripperState::Closed => {
            next.gripper = GripperState::Open;
            if let Some(a) = next.attached.take() {
                events.push(WorldEvent::Detach { object: a.object });
            }
        }
        _ => {}
    }

    if let Some(a) = &next.attached {
        next.objects[a.object] = next.eef.compose(&a.relative);
    }
    for (i, task) in scene.spec.tasks.iter().enumerate() {
        let ok = check_success(scene, &next, task);
        if ok && !next.success[i] {
            events.push(WorldEvent::Success { task: i });
        }
        next.success[i] = ok;
    }
    (next, events)
}
