//! Messages exchanged with live teleoperation clients, one JSON object per line.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::{GripperAction, StageKind, UserFrame};
use crate::geometry::Pose;
use crate::inference::argmax_goal;
use crate::sim::{EpisodeRunner, GripperState, WorldEvent};
use crate::telemetry::BeliefEntry;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPose {
    pub name: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Attach,
    Detach,
    Success,
    Error,
}

/// Server broadcast after every tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    /// Ticks completed, so the first frame of a session has tick 1.
    pub tick: u64,
    pub eef: Pose,
    pub gripper_closed: bool,
    pub attached: Option<String>,
    pub objects: Vec<ObjectPose>,
    pub stage: StageKind,
    pub belief: Vec<BeliefEntry>,
    pub argmax: Option<String>,
    pub assist_target: Option<Pose>,
    pub success: bool,
    pub state_hash: String,
}

impl StateFrame {
    /// Snapshot of a running episode after its latest tick.
    pub fn capture(runner: &EpisodeRunner) -> Self {
        let state = runner.state();
        let scene = runner.scene();
        let controller = runner.controller();
        let graph = controller.graph();
        let name = |id| graph.node(id).map(|n| n.name.clone()).unwrap_or_default();
        let belief = controller
            .belief()
            .map(|b| {
                b.log_probabilities()
                    .iter()
                    .map(|(id, lp)| BeliefEntry { id: id.0, goal: name(*id), probability: lp.exp() })
                    .collect()
            })
            .unwrap_or_default();
        let last = runner.records().last();
        let argmax = match last {
            Some(r) => r.argmax.clone(),
            None => controller.belief().and_then(argmax_goal).map(name),
        };
        StateFrame {
            tick: state.tick,
            eef: state.eef,
            gripper_closed: state.gripper == GripperState::Closed,
            attached: state.attached_object().map(|o| scene.objects[o].name.clone()),
            objects: scene
                .objects
                .iter()
                .zip(&state.objects)
                .map(|(o, pose)| ObjectPose { name: o.name.clone(), pose: *pose })
                .collect(),
            stage: controller.stage().kind(),
            belief,
            argmax,
            assist_target: last.and_then(|r| r.assist_target),
            success: runner.task_succeeded(),
            state_hash: state.state_hash(),
        }
    }
}

/// Event messages for what happened during the runner's latest tick.
pub fn tick_events(runner: &EpisodeRunner) -> Vec<WireMessage> {
    let Some(rec) = runner.records().last() else { return Vec::new() };
    let scene = runner.scene();
    let tick = rec.tick + 1;
    rec
        .events
        .iter()
        .map(|e| match e {
            WorldEvent::Attach { object } => {
                WireMessage::Event { event: EventKind::Attach, detail: scene.objects[*object].name.clone(), tick }
            }
            WorldEvent::Detach { object } => {
                WireMessage::Event { event: EventKind::Detach, detail: scene.objects[*object].name.clone(), tick }
            }
            WorldEvent::Success { task } => {
                WireMessage::Event { event: EventKind::Success, detail: scene.spec.tasks[*task].kind().to_string(), tick }
            }
        })
        .collect()
}

/// Every message on a session socket.
///
/// Clients send only `input`; it carries a translation and a gripper
/// event, never a rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMessage {
    Input {
        u_h: [f64; 3],
        #[serde(default)]
        gripper: GripperAction,
        /// Strictly increasing per client.
        seq: u64,
    },
    State(Box<StateFrame>),
    Event {
        event: EventKind,
        detail: String,
        tick: u64,
    },
}

impl WireMessage {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire messages serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        serde_json::from_str(line.trim_end()).map_err(|e| format!("line {} column {}: {e}", e.line(), e.column()))
    }

    /// The operator frame an `input` message carries.
    pub fn as_frame(&self) -> Option<UserFrame> {
        match self {
            WireMessage::Input { u_h, gripper, .. } => Some(UserFrame { u_h: Vector3::from(*u_h), gripper: *gripper }),
            _ => None,
        }
    }
}

/// JSON schema of [`WireMessage`].
pub fn wire_json_schema() -> serde_json::Value {
    let vec3 = serde_json::json!({"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3});
    let vec4 = serde_json::json!({"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4});
    let pose = serde_json::json!({
        "type": "object", "additionalProperties": false, "required": ["position", "quaternion"],
        "properties": {"position": vec3, "quaternion": vec4}
    });
    serde_json::json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "WireMessage",
        "description": format!("Teleoperation session message, protocol version {PROTOCOL_VERSION}. One JSON object per line."),
        "$defs": {
            "pose": pose,
            "input": {
                "type": "object", "additionalProperties": false, "required": ["type", "u_h", "seq"],
                "properties": {
                    "type": {"const": "input"},
                    "u_h": vec3,
                    "gripper": {"enum": ["none", "close", "open"]},
                    "seq": {"type": "integer", "minimum": 0}
                }
            },
            "state": {
                "type": "object", "additionalProperties": false,
                "required": ["type", "tick", "eef", "gripper_closed", "attached", "objects", "stage", "belief",
                             "argmax", "assist_target", "success", "state_hash"],
                "properties": {
                    "type": {"const": "state"},
                    "tick": {"type": "integer", "minimum": 0},
                    "eef": {"$ref": "#/$defs/pose"},
                    "gripper_closed": {"type": "boolean"},
                    "attached": {"type": ["string", "null"]},
                    "objects": {"type": "array", "items": {
                        "type": "object", "additionalProperties": false, "required": ["name", "pose"],
                        "properties": {"name": {"type": "string"}, "pose": {"$ref": "#/$defs/pose"}}
                    }},
                    "stage": {"enum": ["grasping", "auto_grasp", "interaction", "done"]},
                    "belief": {"type": "array", "items": {
                        "type": "object", "additionalProperties": false, "required": ["id", "goal", "probability"],
                        "properties": {
                            "id": {"type": "integer", "minimum": 0},
                            "goal": {"type": "string"},
                            "probability": {"type": "number", "minimum": 0, "maximum": 1}
                        }
                    }},
                    "argmax": {"type": ["string", "null"]},
                    "assist_target": {"oneOf": [{"$ref": "#/$defs/pose"}, {"type": "null"}]},
                    "success": {"type": "boolean"},
                    "state_hash": {"type": "string"}
                }
            },
            "event": {
                "type": "object", "additionalProperties": false, "required": ["type", "event", "detail", "tick"],
                "properties": {
                    "type": {"const": "event"},
                    "event": {"enum": ["attach", "detach", "success", "error"]},
                    "detail": {"type": "string"},
                    "tick": {"type": "integer", "minimum": 0}
                }
            }
        },
        "oneOf": [{"$ref": "#/$defs/input"}, {"$ref": "#/$defs/state"}, {"$ref": "#/$defs/event"}]
    })
}
