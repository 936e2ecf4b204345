use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::assist::{auto_grasp_step, grasp_assist_step, interaction_assist_target, AssistParams};
use super::grasp::{sample_grasps_fps, select_grasp_target, GraspCandidate};
use super::stage::{is_legal_transition, Stage, StageState};
use super::ControlError;
use crate::geometry::{AlignmentConstraint, Pose};
use crate::graph::{InteractionGraph, NodeId, ObjectNode};
use crate::inference::{
    argmax_goal, reset_belief, update_belief, BeliefStage, CostParams, GoalBelief, InputSample,
};

/// Assistance policy being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// No assistance; the operator closes the gripper directly.
    Teleop,
    /// Assistance with graph filtering disabled.
    TascMinus,
    Tasc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Teleop, Method::TascMinus, Method::Tasc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Teleop => "teleop",
            Method::TascMinus => "tasc-minus",
            Method::Tasc => "tasc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ControlError::InvalidParams(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperAction {
    #[default]
    None,
    Close,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub method: Method,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub assist: AssistParams,
}

impl ControllerConfig {
    pub fn new(method: Method) -> Self {
        Self { method, cost: CostParams::default(), assist: AssistParams::default() }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        self.cost.validate()?;
        self.assist.validate()
    }
}

/// Source of axis-alignment constraints for a (held, target) object pair.
pub trait ConstraintProvider: Send + Sync {
    fn constraints(&self, grasped: &ObjectNode, target: &ObjectNode) -> Result<Vec<AlignmentConstraint>, String>;
}

/// Provider that never has constraints; interaction assistance stays off.
pub struct NoConstraints;

impl ConstraintProvider for NoConstraints {
    fn constraints(&self, _: &ObjectNode, _: &ObjectNode) -> Result<Vec<AlignmentConstraint>, String> {
        Ok(Vec::new())
    }
}

/// What the controller sees of the world at the start of a tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSnapshot {
    pub tick: u64,
    pub eef: Pose,
    pub attached: Option<NodeId>,
    pub task_success: bool,
}

/// Operator input for one tick: a translation and an optional gripper event.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UserFrame {
    pub u_h: Vector3<f64>,
    #[serde(default)]
    pub gripper: GripperAction,
}

impl UserFrame {
    pub fn idle() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    /// World-frame rotation to pre-multiply onto the end-effector orientation.
    pub u_r: UnitQuaternion<f64>,
    /// Translation to apply this tick: the operator's during teleoperation,
    /// the controller's own during AutoGrasp, zero once done.
    pub translation: Vector3<f64>,
    pub gripper: GripperAction,
    pub stage: StageState,
    pub belief: Option<GoalBelief>,
    pub argmax: Option<NodeId>,
    pub assist_target: Option<Pose>,
    pub diagnostics: Vec<String>,
    /// Set when the episode can no longer succeed.
    pub failure: Option<String>,
}

/// Staged assistance policy. `tick` is the only mutating call.
pub struct Controller {
    graph: Arc<InteractionGraph>,
    grasps: BTreeMap<NodeId, Vec<GraspCandidate>>,
    provider: Arc<dyn ConstraintProvider>,
    config: ControllerConfig,
    stage: StageState,
    belief: Option<GoalBelief>,
    goal_positions: BTreeMap<NodeId, Vector3<f64>>,
    constraints: BTreeMap<(NodeId, NodeId), Vec<AlignmentConstraint>>,
    attach_orientation: Option<UnitQuaternion<f64>>,
    direct_grasp: bool,
    init_diagnostics: Vec<String>,
}

impl Controller {
    /// `dense_grasps` maps objects to planner output; each set is reduced by
    /// farthest-point sampling here. Objects without an entry have no grasps.
    pub fn new(
        graph: Arc<InteractionGraph>,
        dense_grasps: &BTreeMap<NodeId, Vec<GraspCandidate>>,
        provider: Arc<dyn ConstraintProvider>,
        config: ControllerConfig,
    ) -> Result<Self, ControlError> {
        config.validate()?;
        let mut grasps = BTreeMap::new();
        for node in graph.nodes() {
            let dense = dense_grasps.get(&node.id).map(Vec::as_slice).unwrap_or(&[]);
            let kept = if dense.is_empty() { Vec::new() } else { sample_grasps_fps(dense, config.assist.grasps_per_object)? };
            grasps.insert(node.id, kept);
        }
        let goal_positions = graph.nodes().iter().map(|n| (n.id, n.center)).collect();
        let mut c = Self {
            graph,
            grasps,
            provider,
            config,
            stage: StageState::initial(),
            belief: None,
            goal_positions,
            constraints: BTreeMap::new(),
            attach_orientation: None,
            direct_grasp: false,
            init_diagnostics: Vec::new(),
        };
        let goals = c.grasp_goals();
        c.direct_grasp = goals.is_empty();
        if goals.is_empty() && config.method != Method::Teleop {
            c.init_diagnostics.push("no grasp-stage goals; passing input through".into());
        }
        c.belief = reset_belief(&goals, BeliefStage::Grasping).ok();
        Ok(c)
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn stage(&self) -> &StageState {
        &self.stage
    }

    pub fn belief(&self) -> Option<&GoalBelief> {
        self.belief.as_ref()
    }

    pub fn grasps(&self, id: NodeId) -> &[GraspCandidate] {
        self.grasps.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Cached constraints for a pair, if fetched.
    pub fn cached_constraints(&self, grasped: NodeId, target: NodeId) -> Option<&[AlignmentConstraint]> {
        self.constraints.get(&(grasped, target)).map(Vec::as_slice)
    }

    /// True when the operator's own gripper close performs the grasp
    /// (no grasp-stage goals, so no AutoGrasp).
    pub fn direct_grasp(&self) -> bool {
        self.direct_grasp
    }

    /// Goal set of the grasping stage under the configured method.
    pub fn grasp_goals(&self) -> Vec<NodeId> {
        match self.config.method {
            Method::Teleop => Vec::new(),
            Method::Tasc => self.graph.grasp_stage_goals(),
            Method::TascMinus => {
                self.graph.nodes().iter().filter(|n| !self.grasps(n.id).is_empty()).map(|n| n.id).collect()
            }
        }
    }

    /// Goal set of the interaction stage once `grasped` is held.
    pub fn interaction_goals(&self, grasped: NodeId) -> Vec<NodeId> {
        match self.config.method {
            Method::Teleop => Vec::new(),
            Method::Tasc => self.graph.interaction_stage_goals(grasped).unwrap_or_default(),
            Method::TascMinus => self.graph.nodes().iter().map(|n| n.id).filter(|&id| id != grasped).collect(),
        }
    }

    fn enter_interaction(&mut self, grasped: NodeId, orientation: UnitQuaternion<f64>, diagnostics: &mut Vec<String>) {
        self.attach_orientation = Some(orientation);
        let goals = self.interaction_goals(grasped);
        if goals.is_empty() && self.config.method != Method::Teleop {
            diagnostics.push(format!("no interaction goals for {grasped}; passing input through"));
        }
        let Some(held) = self.graph.node(grasped) else {
            self.belief = None;
            return;
        };
        for &g in &goals {
            if self.constraints.contains_key(&(grasped, g)) {
                continue;
            }
            let Some(target) = self.graph.node(g) else { continue };
            let fetched = match self.provider.constraints(held, target) {
                Ok(c) => {
                    if c.is_empty() {
                        diagnostics.push(format!("no constraints for {} -> {}", held.name, target.name));
                    }
                    c
                }
                Err(e) => {
                    diagnostics.push(format!("constraint query {} -> {} failed: {e}", held.name, target.name));
                    Vec::new()
                }
            };
            self.constraints.insert((grasped, g), fetched);
        }
        self.belief = reset_belief(&goals, BeliefStage::Interaction).ok();
    }

    fn update(&mut self, snap: &SceneSnapshot, frame: &UserFrame) -> Result<Option<NodeId>, ControlError> {
        if let Some(b) = &self.belief {
            let sample = InputSample::new(snap.eef.position, frame.u_h, snap.tick);
            self.belief = Some(update_belief(b, &sample, &self.goal_positions, &self.config.cost)?);
        }
        Ok(self.belief.as_ref().and_then(argmax_goal))
    }

    /// Advances the policy by one tick.
    pub fn tick(&mut self, snap: &SceneSnapshot, frame: &UserFrame) -> Result<TickOutput, ControlError> {
        let p = self.config.assist;
        let mut diagnostics = std::mem::take(&mut self.init_diagnostics);
        let mut failure = None;
        let mut u_r = UnitQuaternion::identity();
        let mut translation = frame.u_h;
        let mut gripper = GripperAction::None;
        let mut assist_target = None;
        let mut next = self.stage.stage;

        match self.stage.stage {
            Stage::Grasping => {
                let goal = self.update(snap, frame)?;
                if self.direct_grasp {
                    gripper = frame.gripper;
                    if let Some(id) = snap.attached {
                        next = Stage::Interaction { grasped: id, target: None };
                        self.enter_interaction(id, snap.eef.orientation, &mut diagnostics);
                    }
                } else {
                    let selection = goal.and_then(|g| select_grasp_target(&snap.eef, self.grasps(g)).map(|s| (g, s)));
                    if let Some((_, sel)) = &selection {
                        assist_target = Some(sel.pose);
                        u_r = grasp_assist_step(&snap.eef, &sel.pose, &frame.u_h, &p);
                    }
                    match (frame.gripper, selection) {
                        (GripperAction::Close, Some((g, sel))) => {
                            let reach = (sel.pose.position - snap.eef.position).norm();
                            let obb_dist = self.graph.node(g).map_or(f64::INFINITY, |n| n.obb.distance_to_point(&sel.pose.position));
                            if reach > p.grasp_trigger_radius {
                                diagnostics.push(format!("gripper close ignored: grasp target {reach:.3} m away"));
                            } else if obb_dist > p.attach_radius {
                                diagnostics.push(format!("gripper close ignored: no object within {} m of the grasp", p.attach_radius));
                            } else {
                                next = Stage::AutoGrasp { target: sel.pose, object: g };
                            }
                        }
                        (GripperAction::Close, None) => {
                            diagnostics.push("gripper close ignored: no grasp target".into());
                        }
                        (GripperAction::Open, _) => gripper = GripperAction::Open,
                        (GripperAction::None, _) => {}
                    }
                }
            }
            Stage::AutoGrasp { target, object } => {
                assist_target = Some(target);
                if snap.tick.saturating_sub(self.stage.entered_tick) > p.auto_grasp_budget {
                    failure = Some(format!("auto-grasp did not converge within {} ticks", p.auto_grasp_budget));
                }
                let twist = auto_grasp_step(&snap.eef, &target, &p);
                translation = twist.translation;
                u_r = twist.rotation;
                if twist.arrived {
                    gripper = GripperAction::Close;
                    self.enter_interaction(object, u_r * snap.eef.orientation, &mut diagnostics);
                    let first = self.belief.as_ref().and_then(argmax_goal);
                    next = Stage::Interaction { grasped: object, target: first };
                }
            }
            Stage::Interaction { grasped, .. } => {
                if snap.task_success {
                    next = Stage::Done;
                    translation = Vector3::zeros();
                } else {
                    gripper = frame.gripper;
                    let goal = self.update(snap, frame)?;
                    next = Stage::Interaction { grasped, target: goal };
                    if let (Some(g), Some(attach), true) = (goal, self.attach_orientation, snap.attached == Some(grasped)) {
                        let cons = self.constraints.get(&(grasped, g)).map(Vec::as_slice).unwrap_or(&[]);
                        if let (Some(held), Some(target)) = (self.graph.node(grasped), self.graph.node(g)) {
                            let held_now = held.obb.rotated_about(&(snap.eef.orientation * attach.inverse()), &snap.eef.position);
                            if let Some(goal_pose) = interaction_assist_target(&held_now, &target.obb, cons, &snap.eef) {
                                assist_target = Some(goal_pose);
                                u_r = grasp_assist_step(&snap.eef, &goal_pose, &frame.u_h, &p);
                            }
                        }
                    }
                }
            }
            Stage::Done => {
                translation = Vector3::zeros();
            }
        }

        if next != self.stage.stage {
            if !is_legal_transition(&self.stage.stage, &next, self.direct_grasp) {
                return Err(ControlError::IllegalTransition(format!("{:?} -> {:?}", self.stage.kind(), next.kind())));
            }
            let entered_tick = if next.kind() == self.stage.kind() { self.stage.entered_tick } else { snap.tick };
            self.stage = StageState { stage: next, entered_tick };
        }

        Ok(TickOutput {
            u_r,
            translation,
            gripper,
            stage: self.stage,
            argmax: self.belief.as_ref().and_then(argmax_goal),
            belief: self.belief.clone(),
            assist_target,
            diagnostics,
            failure,
        })
    }
}
