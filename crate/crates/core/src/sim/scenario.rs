use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::Shape;
use super::tasks::TaskSpec;
use super::world::{GripperState, WorldState};
use super::SimError;
use crate::geometry::{obb_from_points, OrientedBox, Pose};
use crate::graph::GroundedObject;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

fn default_version() -> u32 {
    SCENARIO_SCHEMA_VERSION
}
fn default_tick_rate() -> f64 {
    20.0
}
fn default_tick_budget() -> u64 {
    1500
}
fn default_density() -> f64 {
    20_000.0
}
fn default_attach_radius() -> f64 {
    0.05
}
fn default_attempts() -> u32 {
    200
}
fn default_clearance() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Workspace {
    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.min[i], self.max[i]))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Table-plane placement: the object's local origin goes to `center`
/// (plus uniform jitter) at z = 0, turned by `yaw` (plus uniform jitter).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub center: [f64; 2],
    #[serde(default)]
    pub jitter: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub yaw_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    pub name: String,
    /// Used when no episode seed is given.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tick_rate")]
    pub tick_rate: f64,
    #[serde(default = "default_tick_budget")]
    pub tick_budget: u64,
    pub workspace: Workspace,
    pub eef_start: Pose,
    /// Surface points per square meter.
    #[serde(default = "default_density")]
    pub point_density: f64,
    #[serde(default = "default_attach_radius")]
    pub attach_radius: f64,
    /// Minimum gap between object footprints.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    #[serde(default = "default_attempts")]
    pub max_placement_attempts: u32,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: ScenarioSpec = serde_json::from_str(text)
            .map_err(|e| SimError::Spec(format!("line {} column {}: {e}", e.line(), e.column())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(SimError::Spec(format!("unsupported schema_version {}", self.schema_version)));
        }
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return Err(SimError::Spec("tick_rate must be positive".into()));
        }
        if !(self.point_density.is_finite() && self.point_density > 0.0) {
            return Err(SimError::Spec("point_density must be positive".into()));
        }
        if !(self.attach_radius.is_finite() && self.attach_radius > 0.0) {
            return Err(SimError::Spec("attach_radius must be positive".into()));
        }
        let w = &self.workspace;
        if (0..3).any(|i| !(w.min[i].is_finite() && w.max[i].is_finite() && w.min[i] < w.max[i])) {
            return Err(SimError::Spec("workspace min must be below max on every axis".into()));
        }
        if w.min[2] < 0.0 {
            return Err(SimError::Spec("workspace must not reach below the table".into()));
        }
        if !w.contains(&self.eef_start.position) {
            return Err(SimError::Spec("eef_start lies outside the workspace".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for o in &self.objects {
            if o.name.trim().is_empty() || !names.insert(o.name.to_lowercase()) {
                return Err(SimError::Spec(format!("object names must be unique and non-empty: {:?}", o.name)));
            }
            o.shape.validate().map_err(|e| SimError::Spec(format!("{}: {e}", o.name)))?;
            let p = &o.placement;
            for i in 0..2 {
                if p.jitter[i] < 0.0
                    || p.center[i] - p.jitter[i] < w.min[i]
                    || p.center[i] + p.jitter[i] > w.max[i]
                {
                    return Err(SimError::Spec(format!("{}: placement region leaves the workspace", o.name)));
                }
            }
        }
        for t in &self.tasks {
            for name in [t.object(), t.target()] {
                if !names.contains(&name.to_lowercase()) {
                    return Err(SimError::Spec(format!("task {} names unknown object {name:?}", t.kind())));
                }
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name.eq_ignore_ascii_case(name))
    }

    pub fn task(&self, kind: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.kind() == kind)
    }
}

/// Static per-object data derived from the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    /// Surface samples in the object frame.
    pub local_cloud: Vec<Vector3<f64>>,
    pub local_centroid: Vector3<f64>,
    pub local_obb: OrientedBox,
    /// Largest horizontal distance of a surface point from the local origin.
    pub footprint_radius: f64,
}

impl SceneObject {
    pub fn world_cloud(&self, pose: &Pose) -> Vec<Vector3<f64>> {
        self.local_cloud.iter().map(|p| pose.transform_point(p)).collect()
    }

    pub fn world_obb(&self, pose: &Pose) -> OrientedBox {
        self.local_obb.transformed(pose)
    }
}

/// A loaded scenario instance: static object data plus the seed it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Grounded objects as seen in `state`, in scene order.
    pub fn grounded_objects(&self, state: &WorldState) -> Vec<GroundedObject> {
        self.objects
            .iter()
            .zip(&state.objects)
            .map(|(o, pose)| {
                let cloud = o.world_cloud(pose);
                GroundedObject::new(o.name.clone(), pose.transform_point(&o.local_centroid), cloud)
            })
            .collect()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.spec.tick_rate
    }
}

fn yaw_pose(x: f64, y: f64, yaw: f64) -> Pose {
    Pose::new(Vector3::new(x, y, 0.0), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
}

/// Samples object clouds and placements for `seed`.
///
/// Each object is placed in spec order; a placement whose footprint comes
/// within `clearance` of an earlier object is redrawn, and the spec is
/// rejected once `max_placement_attempts` draws fail for one object.
pub fn load_scenario(spec: &ScenarioSpec, seed: u64) -> Result<(Scene, WorldState), SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::with_capacity(spec.objects.len());
    for o in &spec.objects {
        let local_cloud = o.shape.sample_surface(spec.point_density, &mut rng);
        let local_centroid = local_cloud.iter().sum::<Vector3<f64>>() / local_cloud.len() as f64;
        let local_obb = obb_from_points(&local_cloud).map_err(|e| SimError::Spec(format!("{}: {e}", o.name)))?;
        let footprint_radius = local_cloud.iter().map(|p| p.xy().norm()).fold(0.0, f64::max);
        objects.push(SceneObject { name: o.name.clone(), shape: o.shape.clone(), local_cloud, local_centroid, local_obb, footprint_radius });
    }

    let mut poses: Vec<Pose> = Vec::with_capacity(objects.len());
    for (i, o) in spec.objects.iter().enumerate() {
        let p = &o.placement;
        let mut placed = None;
        for _ in 0..spec.max_placement_attempts.max(1) {
            let jx = if p.jitter[0] > 0.0 { rng.random_range(-p.jitter[0]..=p.jitter[0]) } else { 0.0 };
            let jy = if p.jitter[1] > 0.0 { rng.random_range(-p.jitter[1]..=p.jitter[1]) } else { 0.0 };
            let jyaw = if p.yaw_jitter > 0.0 { rng.random_range(-p.yaw_jitter..=p.yaw_jitter) } else { 0.0 };
            let pose = yaw_pose(p.center[0] + jx, p.center[1] + jy, p.yaw + jyaw);
            let clear = poses.iter().enumerate().all(|(j, q)| {
                (pose.position - q.position).xy().norm()
                    >= objects[i].footprint_radius + objects[j].footprint_radius + spec.clearance
            });
            if clear {
                placed = Some(pose);
                break;
            }
        }
        let pose = placed.ok_or_else(|| {
            SimError::Spec(format!("could not place {} without overlap in {} attempts", o.name, spec.max_placement_attempts))
        })?;
        poses.push(pose);
    }

    let state = WorldState {
        tick: 0,
        eef: spec.eef_start,
        gripper: GripperState::Open,
        attached: None,
        objects: poses,
        success: vec![false; spec.tasks.len()],
    };
    let scene = Scene { spec: spec.clone(), seed, objects };
    Ok((scene, state))
}
