use std::fs;
use std::path::{Path, PathBuf};

use super::wire::{parse_payload, ConstraintResponse, GraspFixture, TripletResponse};
use super::{AdapterError, AdapterResponse, ConstraintRequest, GraspPlanner, TripletRequest, VlmAdapter};
use crate::control::GraspCandidate;
use crate::geometry::AlignmentConstraint;
use crate::graph::ObjectNode;

/// File stem for a constraint fixture: `<grasped>__<target>`, lower case.
pub fn constraint_key(grasped: &str, target: &str) -> String {
    format!("{}__{}", grasped.trim().to_lowercase(), target.trim().to_lowercase())
}

/// Authored or recorded responses on disk.
///
/// Layout under the root:
/// - `transcripts/<request hash>.json`: recorded raw responses, checked first
/// - `triplets/<scene>.json`
/// - `constraints/<grasped>__<target>.json`; a missing pair has no constraints
/// - `grasps/<object>.json`
#[derive(Debug, Clone)]
pub struct FixtureStore {
    root: PathBuf,
}

impl FixtureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn read(&self, rel: &Path) -> Result<Option<(String, String)>, AdapterError> {
        let path = self.root.join(rel);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some((path.display().to_string(), text))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Transcript for `hash` if one was recorded, else the named fixture.
    fn lookup(&self, hash: &str, named: &Path) -> Result<Option<(String, String)>, AdapterError> {
        if let Some(found) = self.read(&Path::new("transcripts").join(format!("{hash}.json")))? {
            return Ok(Some(found));
        }
        self.read(named)
    }

    /// Stores `transcript` under its request hash.
    pub fn record_transcript(&self, hash: &str, transcript: &str) -> Result<PathBuf, AdapterError> {
        let dir = self.root.join("transcripts");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{hash}.json"));
        fs::write(&path, transcript)?;
        Ok(path)
    }

    pub fn load_grasps(&self, name: &str) -> Result<Option<AdapterResponse<Vec<GraspCandidate>>>, AdapterError> {
        let rel = Path::new("grasps").join(format!("{}.json", name.trim().to_lowercase()));
        let Some((path, text)) = self.read(&rel)? else { return Ok(None) };
        let fixture: GraspFixture =
            parse_payload(&text).map_err(|message| AdapterError::Fixture { path: path.clone(), message })?;
        let payload = fixture.validate().map_err(|message| AdapterError::Fixture { path: path.clone(), message })?;
        Ok(Some(AdapterResponse {
            payload,
            provenance: path,
            request_hash: super::request_hash(&serde_json::json!({"kind": "grasps", "object": name.to_lowercase()})),
            latency_ms: 0.0,
            transcript: text,
        }))
    }
}

impl VlmAdapter for FixtureStore {
    fn extract_triplets(&self, request: &TripletRequest) -> Result<AdapterResponse<TripletResponse>, AdapterError> {
        let hash = request.hash();
        let named = Path::new("triplets").join(format!("{}.json", request.scene));
        let (path, text) =
            self.lookup(&hash, &named)?.ok_or_else(|| AdapterError::MissingFixture(format!("scene {:?}", request.scene)))?;
        let payload: TripletResponse =
            parse_payload(&text).map_err(|message| AdapterError::Schema { message, transcript: text.clone() })?;
        let warnings =
            payload.validate().map_err(|message| AdapterError::Schema { message, transcript: text.clone() })?;
        for w in warnings {
            log::warn!("{path}: {w}");
        }
        Ok(AdapterResponse { payload, provenance: path, request_hash: hash, latency_ms: 0.0, transcript: text })
    }

    fn extract_constraints(
        &self,
        request: &ConstraintRequest<'_>,
    ) -> Result<AdapterResponse<Vec<AlignmentConstraint>>, AdapterError> {
        let hash = request.hash();
        let key = constraint_key(&request.grasped.name, &request.target.name);
        let named = Path::new("constraints").join(format!("{key}.json"));
        let Some((path, text)) = self.lookup(&hash, &named)? else {
            return Ok(AdapterResponse {
                payload: Vec::new(),
                provenance: format!("fixture:none:{key}"),
                request_hash: hash,
                latency_ms: 0.0,
                transcript: String::new(),
            });
        };
        let parsed: ConstraintResponse =
            parse_payload(&text).map_err(|message| AdapterError::Schema { message, transcript: text.clone() })?;
        parsed.validate().map_err(|message| AdapterError::Schema { message, transcript: text.clone() })?;
        Ok(AdapterResponse { payload: parsed.constraints, provenance: path, request_hash: hash, latency_ms: 0.0, transcript: text })
    }
}

impl GraspPlanner for FixtureStore {
    fn generate_grasps(&self, node: &ObjectNode) -> Result<AdapterResponse<Vec<GraspCandidate>>, AdapterError> {
        self.load_grasps(&node.name)?
            .ok_or_else(|| AdapterError::MissingFixture(format!("grasps for {:?}", node.name)))
    }
}
