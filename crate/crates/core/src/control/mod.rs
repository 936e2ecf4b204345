//! Staged assistance: grasp selection and rotation blending while reaching,
//! autonomous grasp completion, and axis-alignment assistance while holding.

mod assist;
mod controller;
mod grasp;
mod stage;

pub use assist::{
    auto_grasp_step, grasp_assist_step, interaction_assist_target, AssistParams, Twist, ARRIVAL_ANGLE_TOL,
    ARRIVAL_POSITION_TOL,
};
pub use controller::{
    ConstraintProvider, Controller, ControllerConfig, GripperAction, Method, NoConstraints, SceneSnapshot, TickOutput,
    UserFrame,
};
pub use grasp::{sample_grasps_fps, select_grasp_target, GraspCandidate, GraspSelection};
pub use stage::{is_legal_transition, Stage, StageKind, StageState};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("grasp candidate list is empty")]
    NoCandidates,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("illegal stage transition {0}")]
    IllegalTransition(String),
    #[error(transparent)]
    Inference(#[from] crate::inference::InferenceError),
}
