//! Kinematic tabletop world, scripted operators and episode execution.

pub mod episode;
pub mod scenario;
pub mod shapes;
pub mod tasks;
pub mod user;
pub mod world;

pub use episode::{
    object_poses, run_episode, run_setup, Episode, EpisodeConfig, EpisodeReport, EpisodeRunner, EpisodeSetup, SETTLE_TICKS,
};
pub use scenario::{load_scenario, ObjectSpec, Placement, ScenarioSpec, Scene, SceneObject, Workspace, SCENARIO_SCHEMA_VERSION};
pub use shapes::{CylinderAxis, Part, Shape};
pub use tasks::{check_success, line_angle, TaskSpec};
pub use user::{Observation, ScriptedUser, UserPhase, UserPolicy, UserSpec};
pub use world::{world_step, Attachment, GripperState, WorldEvent, WorldState};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error("io: {0}")]
    Io(String),
    #[error("adapter: {0}")]
    Adapter(#[from] crate::perception::AdapterError),
    #[error("graph: {0}")]
    Graph(String),
    #[error("episode already finished")]
    Finished,
    #[error("control: {0}")]
    Control(#[from] crate::control::ControlError),
}
