use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scenario::{load_scenario, ScenarioSpec, Scene};
use super::tasks::TaskSpec;
use super::user::{Observation, ScriptedUser, UserPhase, UserSpec};
use super::world::{world_step, WorldState};
use super::SimError;
use crate::control::{
    ConstraintProvider, Controller, ControllerConfig, GraspCandidate, GripperAction, Method, SceneSnapshot, StageKind,
    UserFrame,
};
use crate::geometry::{AlignmentConstraint, Pose};
use crate::graph::{build_graph, InteractionGraph, NodeId, ObjectNode};
use crate::perception::wire::TripletResponse;
use crate::perception::{constraint_key, ConstraintRequest, GraspPlanner, TripletRequest, VlmAdapter};
use crate::telemetry::{BeliefEntry, Telemetry, TickRecord};

/// Ticks an operator who has finished waits for success before the episode is called a failure.
pub const SETTLE_TICKS: u64 = 20;

/// Everything that selects an episode apart from perception output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub scenario: ScenarioSpec,
    pub seed: u64,
    /// Kind of the declared task to pursue; `None` tracks every declared task.
    #[serde(default)]
    pub task: Option<String>,
    pub controller: ControllerConfig,
    /// Scripted operator, absent for externally driven sessions.
    #[serde(default)]
    pub user: Option<UserSpec>,
}

impl EpisodeConfig {
    pub fn new(scenario: ScenarioSpec, seed: u64, task: &str, method: Method, user: UserSpec) -> Self {
        Self {
            scenario,
            seed,
            task: Some(task.to_string()),
            controller: ControllerConfig::new(method),
            user: Some(user),
        }
    }

    pub fn task_spec(&self) -> Result<Option<(usize, &TaskSpec)>, SimError> {
        match &self.task {
            None => Ok(None),
            Some(kind) => self
                .scenario
                .tasks
                .iter()
                .enumerate()
                .find(|(_, t)| t.kind() == kind)
                .map(Some)
                .ok_or_else(|| SimError::Spec(format!("scenario {} declares no {kind:?} task", self.scenario.name))),
        }
    }
}

/// An episode config plus the perception answers it ran with. Enough to
/// re-execute the episode without any adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSetup {
    pub config: EpisodeConfig,
    pub triplets: TripletResponse,
    /// Planner output per object name.
    pub grasps: BTreeMap<String, Vec<GraspCandidate>>,
    /// Constraints per `grasped__target` key. Pairs not listed have none.
    pub constraints: BTreeMap<String, Vec<AlignmentConstraint>>,
}

fn graph_for(scene: &Scene, state: &WorldState, triplets: &TripletResponse) -> Result<(InteractionGraph, Vec<usize>), SimError> {
    let wanted: Vec<String> = triplets.objects.iter().map(|o| o.trim().to_lowercase()).collect();
    let mut indices = Vec::new();
    let mut objects = Vec::new();
    for (i, g) in scene.grounded_objects(state).into_iter().enumerate() {
        if wanted.is_empty() || wanted.contains(&g.name.to_lowercase()) {
            indices.push(i);
            objects.push(g);
        }
    }
    for w in &wanted {
        if scene.spec.object_index(w).is_none() {
            log::warn!("perceived object {w:?} is not in scenario {}", scene.spec.name);
        }
    }
    let built = build_graph(objects, &triplets.triplets).map_err(|e| SimError::Graph(e.to_string()))?;
    for d in &built.diagnostics {
        log::warn!("{d}");
    }
    Ok((built.graph, indices))
}

/// Object pairs whose constraints a method may ask for.
fn constraint_pairs(method: Method, graph: &InteractionGraph) -> Vec<(NodeId, NodeId)> {
    match method {
        Method::Teleop => Vec::new(),
        Method::Tasc => graph.edges().iter().map(|e| (e.source, e.target)).collect(),
        Method::TascMinus => {
            let ids: Vec<NodeId> = graph.nodes().iter().map(|n| n.id).collect();
            ids.iter().flat_map(|&a| ids.iter().filter(move |&&b| b != a).map(move |&b| (a, b))).collect()
        }
    }
}

impl EpisodeSetup {
    /// Queries perception for everything the episode will need.
    pub fn prepare(config: EpisodeConfig, vlm: &dyn VlmAdapter, planner: &dyn GraspPlanner) -> Result<Self, SimError> {
        config.controller.validate()?;
        config.task_spec()?;
        let (scene, state) = load_scenario(&config.scenario, config.seed)?;
        let triplets = vlm.extract_triplets(&TripletRequest::new(config.scenario.name.clone()))?;
        log::debug!("triplets from {}", triplets.provenance);
        let triplets = triplets.payload;
        let (graph, _) = graph_for(&scene, &state, &triplets)?;

        let mut grasps = BTreeMap::new();
        if config.controller.method != Method::Teleop {
            for node in graph.nodes() {
                let r = planner.generate_grasps(node)?;
                grasps.insert(node.name.to_lowercase(), r.payload);
            }
        }
        let mut constraints = BTreeMap::new();
        for (a, b) in constraint_pairs(config.controller.method, &graph) {
            let (Some(a), Some(b)) = (graph.node(a), graph.node(b)) else { continue };
            let key = constraint_key(&a.name, &b.name);
            if constraints.contains_key(&key) {
                continue;
            }
            let r = vlm.extract_constraints(&ConstraintRequest { grasped: a, target: b })?;
            log::debug!("constraints {key} from {}", r.provenance);
            constraints.insert(key, r.payload);
        }
        Ok(Self { config, triplets, grasps, constraints })
    }
}

struct MapConstraints(BTreeMap<String, Vec<AlignmentConstraint>>);

impl ConstraintProvider for MapConstraints {
    fn constraints(&self, grasped: &ObjectNode, target: &ObjectNode) -> Result<Vec<AlignmentConstraint>, String> {
        Ok(self.0.get(&constraint_key(&grasped.name, &target.name)).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub scenario: String,
    pub task: Option<String>,
    pub method: Method,
    pub seed: u64,
    pub success: bool,
    pub reason: Option<String>,
    pub ticks: u64,
    /// `ticks / tick_rate`, in seconds.
    pub time_s: f64,
    /// Sum of end-effector displacements, in meters.
    pub trajectory_length: f64,
    /// Ticks with non-zero operator translation plus operator gripper events.
    pub inputs: u64,
    /// Stage kinds in the order they were entered.
    pub stages: Vec<StageKind>,
    pub final_state_hash: String,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub report: EpisodeReport,
    pub telemetry: Telemetry,
}

/// One world, one controller, stepped by externally supplied input frames.
pub struct EpisodeRunner {
    setup: Arc<EpisodeSetup>,
    scene: Scene,
    state: WorldState,
    controller: Controller,
    node_object: BTreeMap<NodeId, usize>,
    object_node: BTreeMap<usize, NodeId>,
    task: Option<usize>,
    records: Vec<TickRecord>,
    trajectory_length: f64,
    inputs: u64,
    stages: Vec<StageKind>,
    success_seen: bool,
    outcome: Option<(bool, Option<String>)>,
}

impl EpisodeRunner {
    pub fn new(setup: EpisodeSetup) -> Result<Self, SimError> {
        let setup = Arc::new(setup);
        let cfg = &setup.config;
        let task = cfg.task_spec()?.map(|(i, _)| i);
        let (scene, state) = load_scenario(&cfg.scenario, cfg.seed)?;
        let (graph, indices) = graph_for(&scene, &state, &setup.triplets)?;
        let node_object: BTreeMap<NodeId, usize> = graph.nodes().iter().map(|n| n.id).zip(indices).collect();
        let object_node = node_object.iter().map(|(n, o)| (*o, *n)).collect();
        let dense: BTreeMap<NodeId, Vec<GraspCandidate>> = graph
            .nodes()
            .iter()
            .filter_map(|n| setup.grasps.get(&n.name.to_lowercase()).map(|g| (n.id, g.clone())))
            .collect();
        let provider = Arc::new(MapConstraints(setup.constraints.clone()));
        let controller = Controller::new(Arc::new(graph), &dense, provider, cfg.controller)?;
        let stages = vec![controller.stage().kind()];
        Ok(Self {
            setup,
            scene,
            state,
            controller,
            node_object,
            object_node,
            task,
            records: Vec::new(),
            trajectory_length: 0.0,
            inputs: 0,
            stages,
            success_seen: false,
            outcome: None,
        })
    }

    pub fn setup(&self) -> &EpisodeSetup {
        &self.setup
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    /// Scene index of a graph node.
    pub fn object_of(&self, id: NodeId) -> Option<usize> {
        self.node_object.get(&id).copied()
    }

    fn task_success(&self, state: &WorldState) -> bool {
        match self.task {
            Some(i) => state.success[i],
            None => state.success.iter().any(|s| *s),
        }
    }

    /// Whether the episode's task (any task when none is declared) holds now.
    pub fn task_succeeded(&self) -> bool {
        self.task_success(&self.state)
    }

    /// What a scripted operator sees before the next tick.
    pub fn observation(&self) -> Observation<'_> {
        let last = self.records.last();
        Observation {
            scene: &self.scene,
            state: &self.state,
            stage: self.controller.stage().kind(),
            argmax_object: last.and_then(|r| r.argmax_id).and_then(|id| self.object_of(NodeId(id))),
            assist_target: last.and_then(|r| r.assist_target),
            grasp_trigger_radius: self.controller.config().assist.grasp_trigger_radius,
        }
    }

    /// Ends the episode as a failure unless it already ended.
    pub fn abort(&mut self, reason: impl Into<String>) {
        if self.outcome.is_none() {
            self.outcome = Some((false, Some(reason.into())));
        }
    }

    /// Runs one controller tick and one world step on `frame`.
    pub fn step(&mut self, frame: UserFrame, user_phase: Option<UserPhase>) -> Result<&TickRecord, SimError> {
        if self.outcome.is_some() {
            return Err(SimError::Finished);
        }
        let snap = SceneSnapshot {
            tick: self.state.tick,
            eef: self.state.eef,
            attached: self.state.attached_object().and_then(|o| self.object_node.get(&o).copied()),
            task_success: self.task_success(&self.state),
        };
        let out = self.controller.tick(&snap, &frame)?;
        let (next, events) = world_step(&self.scene, &self.state, &out.translation, &out.u_r, out.gripper);

        self.trajectory_length += (next.eef.position - self.state.eef.position).norm();
        self.inputs += u64::from(frame.u_h.norm() > 0.0) + u64::from(frame.gripper != GripperAction::None);
        let kind = out.stage.kind();
        if self.stages.last() != Some(&kind) {
            self.stages.push(kind);
        }

        let graph = self.controller.graph();
        let name = |id: NodeId| graph.node(id).map(|n| n.name.clone()).unwrap_or_default();
        let belief = out
            .belief
            .as_ref()
            .map(|b| {
                b.log_probabilities()
                    .iter()
                    .map(|(id, lp)| BeliefEntry { id: id.0, goal: name(*id), probability: lp.exp() })
                    .collect()
            })
            .unwrap_or_default();
        let record = TickRecord {
            tick: snap.tick,
            input: frame,
            user_phase,
            stage: out.stage,
            u_r: [out.u_r.w, out.u_r.i, out.u_r.j, out.u_r.k],
            translation: out.translation,
            gripper: out.gripper,
            belief,
            argmax: out.argmax.map(name),
            argmax_id: out.argmax.map(|id| id.0),
            assist_target: out.assist_target,
            eef: next.eef,
            attached: next.attached_object().map(|o| self.scene.objects[o].name.clone()),
            events,
            success: next.success.clone(),
            state_hash: next.state_hash(),
            diagnostics: out.diagnostics,
        };

        let now_success = self.task_success(&next);
        if let Some(reason) = out.failure {
            self.outcome = Some((false, Some(reason)));
        } else if now_success && (self.success_seen || kind == StageKind::Done) {
            self.outcome = Some((true, None));
        } else if next.tick >= self.scene.spec.tick_budget {
            self.outcome = Some((false, Some(format!("tick budget of {} exhausted", self.scene.spec.tick_budget))));
        }
        self.success_seen = now_success;
        self.state = next;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn report(&self) -> EpisodeReport {
        let cfg = &self.setup.config;
        let (success, reason) = match &self.outcome {
            Some((s, r)) => (*s, r.clone()),
            None => (false, Some("episode still running".into())),
        };
        EpisodeReport {
            scenario: cfg.scenario.name.clone(),
            task: cfg.task.clone(),
            method: cfg.controller.method,
            seed: cfg.seed,
            success,
            reason,
            ticks: self.state.tick,
            time_s: self.state.tick as f64 / self.scene.spec.tick_rate,
            trajectory_length: self.trajectory_length,
            inputs: self.inputs,
            stages: self.stages.clone(),
            final_state_hash: self.state.state_hash(),
        }
    }

    pub fn finish(self) -> Episode {
        let report = self.report();
        let telemetry = Telemetry { setup: (*self.setup).clone(), ticks: self.records, summary: Some(report.clone()) };
        Episode { report, telemetry }
    }
}

/// Runs a prepared episode with its scripted operator to completion.
pub fn run_setup(setup: EpisodeSetup) -> Result<Episode, SimError> {
    let cfg = &setup.config;
    let user_spec = cfg.user.clone().ok_or_else(|| SimError::Spec("episode has no scripted user".into()))?;
    let task = match cfg.task_spec()? {
        Some((_, t)) => t.clone(),
        None => return Err(SimError::Spec("a scripted episode needs a task".into())),
    };
    // The operator's noise stream is derived from the same seed as the scene.
    let mut user = ScriptedUser::new(user_spec, task, cfg.seed);
    let mut runner = EpisodeRunner::new(setup)?;
    let mut idle_after_finish = 0;
    while !runner.is_finished() {
        let frame = user.step(&runner.observation());
        let phase = user.phase();
        runner.step(frame, Some(phase))?;
        if user.is_finished() {
            idle_after_finish += 1;
            if idle_after_finish > SETTLE_TICKS && !runner.is_finished() {
                runner.abort("operator finished without completing the task");
            }
        }
    }
    Ok(runner.finish())
}

/// Prepares and runs one scripted episode.
pub fn run_episode(config: EpisodeConfig, vlm: &dyn VlmAdapter, planner: &dyn GraspPlanner) -> Result<Episode, SimError> {
    run_setup(EpisodeSetup::prepare(config, vlm, planner)?)
}

/// Pose of every object in `state`, by name.
pub fn object_poses(scene: &Scene, state: &WorldState) -> Vec<(String, Pose)> {
    scene.objects.iter().zip(&state.objects).map(|(o, p)| (o.name.clone(), *p)).collect()
}
