use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::graph::NodeId;

/// Assistance stage. `AutoGrasp` carries the grasp pose frozen at entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Grasping,
    AutoGrasp { target: Pose, object: NodeId },
    Interaction { grasped: NodeId, target: Option<NodeId> },
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Grasping,
    AutoGrasp,
    Interaction,
    Done,
}

impl Stage {
    pub fn kind(&self) -> StageKind {
        match self {
            Stage::Grasping => StageKind::Grasping,
            Stage::AutoGrasp { .. } => StageKind::AutoGrasp,
            Stage::Interaction { .. } => StageKind::Interaction,
            Stage::Done => StageKind::Done,
        }
    }
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Grasping => "grasping",
            StageKind::AutoGrasp => "auto_grasp",
            StageKind::Interaction => "interaction",
            StageKind::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    #[serde(flatten)]
    pub stage: Stage,
    pub entered_tick: u64,
}

impl StageState {
    pub fn initial() -> Self {
        Self { stage: Stage::Grasping, entered_tick: 0 }
    }

    pub fn kind(&self) -> StageKind {
        self.stage.kind()
    }
}

/// Whether `from -> to` is an allowed transition.
///
/// Assisted runs go Grasping, AutoGrasp, Interaction, Done. Unassisted runs
/// skip AutoGrasp (`direct_grasp`), since the operator closes the gripper.
/// Staying put is always allowed.
pub fn is_legal_transition(from: &Stage, to: &Stage, direct_grasp: bool) -> bool {
    use StageKind::*;
    match (from.kind(), to.kind()) {
        (AutoGrasp, AutoGrasp) => from == to,
        (Interaction, Interaction) => match (from, to) {
            (Stage::Interaction { grasped: a, .. }, Stage::Interaction { grasped: b, .. }) => a == b,
            _ => unreachable!(),
        },
        (a, b) if a == b => true,
        (Grasping, AutoGrasp) => !direct_grasp,
        (AutoGrasp, Interaction) => match (from, to) {
            (Stage::AutoGrasp { object, .. }, Stage::Interaction { grasped, .. }) => object == grasped,
            _ => unreachable!(),
        },
        (Grasping, Interaction) => direct_grasp,
        (Interaction, Done) => true,
        _ => false,
    }
}
