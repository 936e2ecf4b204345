//! Boundary to the external perception capabilities: scene triplets and
//! axis constraints from a vision-language model, grasp candidates from a
//! planner, and pinhole grounding of segmentation masks.
//!
//! Every backend has a deterministic fixture mode; the language model also
//! has a live HTTP mode.

mod fixtures;
mod grasps;
mod grounding;
mod live;
mod render;
mod validate;
pub mod wire;

pub use fixtures::{constraint_key, FixtureStore};
pub use grasps::{analytic_grasps, AnalyticGraspParams, AnalyticGrasps};
pub use grounding::{ground_mask, CameraIntrinsics, SceneDescription};
pub use live::{LiveConfig, LiveVlm};
pub use render::{render_axes, AXIS_COLORS, RENDER_SIZE};
pub use validate::{validate_fixture_file, validate_fixtures, FileReport, FixtureKind};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{ConstraintProvider, GraspCandidate};
use crate::geometry::AlignmentConstraint;
use crate::graph::ObjectNode;
use wire::TripletResponse;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("schema violation: {message}")]
    Schema { message: String, transcript: String },
    #[error("no fixture for {0}")]
    MissingFixture(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("http: {0}")]
    Http(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("grounding: {0}")]
    Grounding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Validated payload plus where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterResponse<T> {
    pub payload: T,
    /// Fixture path or endpoint/model id.
    pub provenance: String,
    /// Hex SHA-256 of the canonical request.
    pub request_hash: String,
    pub latency_ms: f64,
    /// Raw text as received, kept for audit.
    pub transcript: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    #[default]
    Fixture,
    Live,
}

impl FromStr for AdapterMode {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixture" => Ok(AdapterMode::Fixture),
            "live" => Ok(AdapterMode::Live),
            _ => Err(AdapterError::Config(format!("unknown adapter mode {s:?}"))),
        }
    }
}

impl fmt::Display for AdapterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterMode::Fixture => "fixture",
            AdapterMode::Live => "live",
        })
    }
}

/// Scene-level query for functional triplets.
#[derive(Debug, Clone, Default)]
pub struct TripletRequest {
    pub scene: String,
    pub image: Option<RgbImage>,
}

impl TripletRequest {
    pub fn new(scene: impl Into<String>) -> Self {
        Self { scene: scene.into(), image: None }
    }

    pub fn hash(&self) -> String {
        request_hash(&serde_json::json!({"kind": "triplets", "scene": self.scene}))
    }
}

/// Pair-level query for axis constraints between a held and a target object.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintRequest<'a> {
    pub grasped: &'a ObjectNode,
    pub target: &'a ObjectNode,
}

impl ConstraintRequest<'_> {
    pub fn hash(&self) -> String {
        request_hash(&serde_json::json!({
            "kind": "constraints",
            "grasped": self.grasped.name.to_lowercase(),
            "target": self.target.name.to_lowercase(),
        }))
    }
}

/// Hex SHA-256 of the compact JSON form of `request`.
pub fn request_hash(request: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(request.to_string().as_bytes()))
}

pub trait VlmAdapter: Send + Sync {
    fn extract_triplets(&self, request: &TripletRequest) -> Result<AdapterResponse<TripletResponse>, AdapterError>;

    /// An empty list means the model found nothing to align.
    fn extract_constraints(
        &self,
        request: &ConstraintRequest<'_>,
    ) -> Result<AdapterResponse<Vec<AlignmentConstraint>>, AdapterError>;
}

pub trait GraspPlanner: Send + Sync {
    fn generate_grasps(&self, node: &ObjectNode) -> Result<AdapterResponse<Vec<GraspCandidate>>, AdapterError>;
}

/// Exposes a language-model adapter to the controller.
pub struct VlmConstraints(pub Arc<dyn VlmAdapter>);

impl ConstraintProvider for VlmConstraints {
    fn constraints(&self, grasped: &ObjectNode, target: &ObjectNode) -> Result<Vec<AlignmentConstraint>, String> {
        let response = self.0.extract_constraints(&ConstraintRequest { grasped, target }).map_err(|e| e.to_string())?;
        if response.payload.is_empty() {
            log::debug!("no constraints for {} -> {} ({})", grasped.name, target.name, response.provenance);
        }
        Ok(response.payload)
    }
}

/// Recorded grasps when a fixture exists, analytic grasps otherwise.
pub struct FixtureOrAnalyticGrasps {
    pub store: FixtureStore,
    pub analytic: AnalyticGrasps,
}

impl GraspPlanner for FixtureOrAnalyticGrasps {
    fn generate_grasps(&self, node: &ObjectNode) -> Result<AdapterResponse<Vec<GraspCandidate>>, AdapterError> {
        match self.store.load_grasps(&node.name)? {
            Some(r) => Ok(r),
            None => self.analytic.generate_grasps(node),
        }
    }
}

/// Language-model adapter and grasp planner for a run.
#[derive(Clone)]
pub struct Adapters {
    pub vlm: Arc<dyn VlmAdapter>,
    pub planner: Arc<dyn GraspPlanner>,
}

impl Adapters {
    /// Fixture mode reads everything under `fixtures`; live mode queries the
    /// endpoint configured in the environment and records transcripts there.
    pub fn new(mode: AdapterMode, fixtures: impl Into<std::path::PathBuf>) -> Result<Self, AdapterError> {
        let store = FixtureStore::new(fixtures);
        let planner = Arc::new(FixtureOrAnalyticGrasps { store: store.clone(), analytic: AnalyticGrasps::default() });
        let vlm: Arc<dyn VlmAdapter> = match mode {
            AdapterMode::Fixture => {
                if !store.root().is_dir() {
                    return Err(AdapterError::Config(format!("fixture directory {} does not exist", store.root().display())));
                }
                Arc::new(store)
            }
            AdapterMode::Live => Arc::new(LiveVlm::new(LiveConfig::from_env()?)?.recording_to(store)),
        };
        Ok(Self { vlm, planner })
    }
}
