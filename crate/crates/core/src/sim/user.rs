use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scenario::Scene;
use super::tasks::TaskSpec;
use super::world::WorldState;
use crate::control::{GripperAction, StageKind, UserFrame};
use crate::geometry::Pose;

fn default_step() -> f64 {
    0.01
}
fn default_patience() -> u64 {
    150
}

/// Synthetic operator behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum UserPolicy {
    /// Carries out the task along straight lines with Gaussian jitter of `sigma` meters per axis.
    StraightLine { sigma: f64 },
    /// Visits `points` with the end-effector, then stays idle. No gripper events.
    Waypoints { points: Vec<[f64; 3]>, sigma: f64 },
    Idle,
    /// Reaches for `decoy` until tick `switch_tick`, then carries out the task.
    Redirecting { decoy: String, switch_tick: u64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    #[serde(flatten)]
    pub policy: UserPolicy,
    /// Largest translation per tick before jitter (meters).
    #[serde(default = "default_step")]
    pub max_step: f64,
    /// Ticks spent waiting for the orientation to come right before giving up and finishing anyway.
    #[serde(default = "default_patience")]
    pub patience: u64,
}

impl UserSpec {
    pub fn straight(sigma: f64) -> Self {
        Self { policy: UserPolicy::StraightLine { sigma }, max_step: default_step(), patience: default_patience() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserPhase {
    /// Moving to the object to pick up.
    Reach,
    /// Waiting while the controller completes the grasp.
    Handover,
    /// Carrying the object to above the target.
    Transport,
    /// Circling above the target while orientation assistance acts.
    Align,
    /// Lowering onto the target.
    Descend,
    Finished,
}

/// What the operator can see each tick.
pub struct Observation<'a> {
    pub scene: &'a Scene,
    pub state: &'a WorldState,
    pub stage: StageKind,
    /// Scene index of the controller's most likely goal, if any.
    pub argmax_object: Option<usize>,
    pub assist_target: Option<Pose>,
    pub grasp_trigger_radius: f64,
}

pub struct ScriptedUser {
    spec: UserSpec,
    task: TaskSpec,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    phase: UserPhase,
    phase_ticks: u64,
    waypoint: usize,
    circle: f64,
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

impl ScriptedUser {
    pub fn new(spec: UserSpec, task: TaskSpec, seed: u64) -> Self {
        let sigma = match &spec.policy {
            UserPolicy::StraightLine { sigma } | UserPolicy::Waypoints { sigma, .. } | UserPolicy::Redirecting { sigma, .. } => *sigma,
            UserPolicy::Idle => 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
        Self { spec, task, rng, noise, phase: UserPhase::Reach, phase_ticks: 0, waypoint: 0, circle: 0.0 }
    }

    pub fn phase(&self) -> UserPhase {
        self.phase
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn is_finished(&self) -> bool {
        self.phase == UserPhase::Finished
    }

    fn set_phase(&mut self, phase: UserPhase) {
        if phase != self.phase {
            self.phase = phase;
            self.phase_ticks = 0;
        }
    }

    fn jitter(&mut self) -> Vector3<f64> {
        match self.noise {
            Some(n) => Vector3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng)),
            None => Vector3::zeros(),
        }
    }

    fn toward(&mut self, from: &Vector3<f64>, to: &Vector3<f64>) -> Vector3<f64> {
        clamp_norm(to - from, self.spec.max_step) + self.jitter()
    }

    /// Next input. Emits only translations and gripper events.
    pub fn step(&mut self, obs: &Observation<'_>) -> UserFrame {
        self.phase_ticks += 1;
        match &self.spec.policy {
            UserPolicy::Idle => UserFrame::idle(),
            UserPolicy::Waypoints { points, .. } => {
                let points = points.clone();
                while self.waypoint < points.len() {
                    let goal = Vector3::from(points[self.waypoint]);
                    if (goal - obs.state.eef.position).norm() <= 1e-12 {
                        self.waypoint += 1;
                        continue;
                    }
                    return UserFrame { u_h: self.toward(&obs.state.eef.position, &goal), gripper: GripperAction::None };
                }
                self.set_phase(UserPhase::Finished);
                UserFrame::idle()
            }
            UserPolicy::Redirecting { decoy, switch_tick, .. } if obs.state.tick < *switch_tick => {
                let i = obs.scene.spec.object_index(decoy).expect("decoy names a scene object");
                let goal = obs.state.objects[i].transform_point(&obs.scene.objects[i].local_centroid) + Vector3::new(0.0, 0.0, 0.05);
                UserFrame { u_h: self.toward(&obs.state.eef.position, &goal), gripper: GripperAction::None }
            }
            UserPolicy::StraightLine { .. } | UserPolicy::Redirecting { .. } => self.task_step(obs),
        }
    }

    fn task_step(&mut self, obs: &Observation<'_>) -> UserFrame {
        let scene = obs.scene;
        let state = obs.state;
        let eef = state.eef.position;
        let object = scene.spec.object_index(self.task.object()).expect("validated task");
        let holding = state.attached_object() == Some(object);

        if matches!(self.phase, UserPhase::Reach | UserPhase::Handover) && holding {
            self.set_phase(UserPhase::Transport);
        }
        match self.phase {
            UserPhase::Reach => {
                if obs.stage == StageKind::AutoGrasp {
                    self.set_phase(UserPhase::Handover);
                    return UserFrame::idle();
                }
                let center = state.objects[object].transform_point(&scene.objects[object].local_centroid);
                let assisted = obs.stage == StageKind::Grasping && obs.argmax_object == Some(object);
                let close = match (assisted, obs.assist_target) {
                    (true, Some(t)) => (t.position - eef).norm() < 0.5 * obs.grasp_trigger_radius,
                    _ => obs.assist_target.is_none() && (center - eef).norm() < 0.01,
                };
                let u_h = self.toward(&eef, &center);
                UserFrame { u_h, gripper: if close { GripperAction::Close } else { GripperAction::None } }
            }
            UserPhase::Handover => UserFrame::idle(),
            UserPhase::Transport => {
                let fp = self.task.functional_point(scene, state);
                let (hover, _) = self.task.goal_points(scene, state);
                if (hover - fp).norm() < 0.005 {
                    self.set_phase(UserPhase::Align);
                    return self.task_step_again(obs);
                }
                UserFrame { u_h: self.toward(&fp, &hover), gripper: GripperAction::None }
            }
            UserPhase::Align => {
                let aligned = match (self.task.orientation_error(scene, state), self.task.tolerance()) {
                    (Some(e), Some(tol)) => e < 0.5 * tol,
                    _ => true,
                };
                if aligned || self.phase_ticks > self.spec.patience {
                    self.set_phase(UserPhase::Descend);
                    return self.task_step_again(obs);
                }
                // Small circles keep the hand moving so assistance keeps acting.
                let fp = self.task.functional_point(scene, state);
                let (hover, _) = self.task.goal_points(scene, state);
                self.circle += 0.5;
                let r = self.spec.max_step / (2.0 * (0.25f64).sin());
                let goal = hover + Vector3::new(r * self.circle.cos(), r * self.circle.sin(), 0.0);
                UserFrame { u_h: self.toward(&fp, &goal), gripper: GripperAction::None }
            }
            UserPhase::Descend => {
                let fp = self.task.functional_point(scene, state);
                let (_, fin) = self.task.goal_points(scene, state);
                if (fin - fp).norm() < 0.004 {
                    self.set_phase(UserPhase::Finished);
                    let release = !matches!(self.task, TaskSpec::Hammer { .. });
                    return UserFrame { u_h: Vector3::zeros(), gripper: if release { GripperAction::Open } else { GripperAction::None } };
                }
                UserFrame { u_h: self.toward(&fp, &fin), gripper: GripperAction::None }
            }
            UserPhase::Finished => UserFrame::idle(),
        }
    }

    fn task_step_again(&mut self, obs: &Observation<'_>) -> UserFrame {
        self.phase_ticks = 1;
        self.task_step(obs)
    }
}
