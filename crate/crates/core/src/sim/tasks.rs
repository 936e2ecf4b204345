use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scenario::Scene;
use super::world::WorldState;
use super::SimError;

fn default_insert_tol() -> f64 {
    15.0
}
fn default_hammer_tol() -> f64 {
    10.0
}
fn default_hammer_distance() -> f64 {
    0.015
}
fn up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

/// Declared task with its success geometry. Points and axes are in the
/// named object's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Released with its center horizontally within `radius` of the target's center.
    Place { object: String, target: String, radius: f64 },
    /// Released, `object_axis` within the tolerance of `target_axis` (either
    /// direction), and the object center inside the target's cylinder of
    /// `radius` and `depth` rising along `target_axis` from its origin.
    Insert {
        object: String,
        target: String,
        radius: f64,
        depth: f64,
        object_axis: [f64; 3],
        #[serde(default = "up")]
        target_axis: [f64; 3],
        #[serde(default = "default_insert_tol")]
        tolerance_deg: f64,
    },
    /// `object_point` within `distance` of `target_point` with
    /// `object_axis` within the tolerance of `target_axis` (either direction).
    Hammer {
        object: String,
        target: String,
        object_point: [f64; 3],
        object_axis: [f64; 3],
        target_point: [f64; 3],
        #[serde(default = "up")]
        target_axis: [f64; 3],
        #[serde(default = "default_hammer_distance")]
        distance: f64,
        #[serde(default = "default_hammer_tol")]
        tolerance_deg: f64,
    },
}

/// Angle between two lines, in `[0, pi/2]`.
pub fn line_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.normalize().dot(&b.normalize()).abs()).clamp(0.0, 1.0).acos()
}

impl TaskSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskSpec::Place { .. } => "place",
            TaskSpec::Insert { .. } => "insert",
            TaskSpec::Hammer { .. } => "hammer",
        }
    }

    pub fn object(&self) -> &str {
        match self {
            TaskSpec::Place { object, .. } | TaskSpec::Insert { object, .. } | TaskSpec::Hammer { object, .. } => object,
        }
    }

    pub fn target(&self) -> &str {
        match self {
            TaskSpec::Place { target, .. } | TaskSpec::Insert { target, .. } | TaskSpec::Hammer { target, .. } => target,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SimError::Spec(format!("{} task: {name} must be positive", self.kind())))
            }
        };
        let nonzero = |name: &str, v: &[f64; 3]| {
            if Vector3::from(*v).norm() > 1e-9 {
                Ok(())
            } else {
                Err(SimError::Spec(format!("{} task: {name} must be non-zero", self.kind())))
            }
        };
        match self {
            TaskSpec::Place { radius, .. } => positive("radius", *radius),
            TaskSpec::Insert { radius, depth, object_axis, target_axis, tolerance_deg, .. } => {
                positive("radius", *radius)?;
                positive("depth", *depth)?;
                positive("tolerance_deg", *tolerance_deg)?;
                nonzero("object_axis", object_axis)?;
                nonzero("target_axis", target_axis)
            }
            TaskSpec::Hammer { object_axis, target_axis, distance, tolerance_deg, .. } => {
                positive("distance", *distance)?;
                positive("tolerance_deg", *tolerance_deg)?;
                nonzero("object_axis", object_axis)?;
                nonzero("target_axis", target_axis)
            }
        }
    }

    fn indices(&self, scene: &Scene) -> (usize, usize) {
        let find = |n: &str| scene.spec.object_index(n).expect("validated task names");
        (find(self.object()), find(self.target()))
    }

    /// World position of the part of the held object the operator steers.
    pub fn functional_point(&self, scene: &Scene, state: &WorldState) -> Vector3<f64> {
        let (o, _) = self.indices(scene);
        let pose = &state.objects[o];
        match self {
            TaskSpec::Hammer { object_point, .. } => pose.transform_point(&Vector3::from(*object_point)),
            _ => pose.transform_point(&scene.objects[o].local_centroid),
        }
    }

    /// Current orientation error in radians; `None` when orientation does not matter.
    pub fn orientation_error(&self, scene: &Scene, state: &WorldState) -> Option<f64> {
        let (o, t) = self.indices(scene);
        match self {
            TaskSpec::Place { .. } => None,
            TaskSpec::Insert { object_axis, target_axis, .. } | TaskSpec::Hammer { object_axis, target_axis, .. } => {
                let a = state.objects[o].transform_vector(&Vector3::from(*object_axis));
                let b = state.objects[t].transform_vector(&Vector3::from(*target_axis));
                Some(line_angle(&a, &b))
            }
        }
    }

    pub fn tolerance(&self) -> Option<f64> {
        match self {
            TaskSpec::Place { .. } => None,
            TaskSpec::Insert { tolerance_deg, .. } | TaskSpec::Hammer { tolerance_deg, .. } => Some(tolerance_deg.to_radians()),
        }
    }

    /// Where the functional point should end up, and a point above it to
    /// approach from.
    pub fn goal_points(&self, scene: &Scene, state: &WorldState) -> (Vector3<f64>, Vector3<f64>) {
        let (_, t) = self.indices(scene);
        let tp = &state.objects[t];
        match self {
            TaskSpec::Place { .. } => {
                let c = tp.transform_point(&scene.objects[t].local_centroid);
                let top = scene.objects[t].world_obb(tp);
                let z = top.center.z + top.half_extents.iter().zip(top.axes.row(2).iter()).map(|(h, a)| h * a.abs()).sum::<f64>();
                let fin = Vector3::new(c.x, c.y, z + 0.02);
                (fin + Vector3::new(0.0, 0.0, 0.06), fin)
            }
            TaskSpec::Insert { depth, target_axis, .. } => {
                let axis = tp.transform_vector(&Vector3::from(*target_axis)).normalize();
                (tp.position + axis * (depth + 0.1), tp.position + axis * (depth * 0.55))
            }
            TaskSpec::Hammer { target_point, .. } => {
                let p = tp.transform_point(&Vector3::from(*target_point));
                (p + Vector3::new(0.0, 0.0, 0.1), p)
            }
        }
    }
}

/// Whether `task` is accomplished in `state`.
pub fn check_success(scene: &Scene, state: &WorldState, task: &TaskSpec) -> bool {
    let (o, t) = task.indices(scene);
    let released = state.attached_object() != Some(o);
    let center = |i: usize| state.objects[i].transform_point(&scene.objects[i].local_centroid);
    match task {
        TaskSpec::Place { radius, .. } => released && (center(o) - center(t)).xy().norm() < *radius,
        TaskSpec::Insert { radius, depth, target_axis, .. } => {
            let tp = &state.objects[t];
            let axis = tp.transform_vector(&Vector3::from(*target_axis)).normalize();
            let v = center(o) - tp.position;
            let along = v.dot(&axis);
            let radial = (v - axis * along).norm();
            released
                && task.orientation_error(scene, state).is_some_and(|e| e < task.tolerance().unwrap())
                && (0.0..=*depth).contains(&along)
                && radial < *radius
        }
        TaskSpec::Hammer { target_point, distance, .. } => {
            let p = task.functional_point(scene, state);
            let q = state.objects[t].transform_point(&Vector3::from(*target_point));
            (p - q).norm() < *distance && task.orientation_error(scene, state).is_some_and(|e| e < task.tolerance().unwrap())
        }
    }
}
