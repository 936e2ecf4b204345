//! JSON payloads exchanged with the perception backends, and their validation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::control::GraspCandidate;
use crate::geometry::{AlignmentConstraint, Pose, UNIT_NORM_TOL};
use crate::graph::Triplet;

/// Version of every wire payload defined here.
pub const WIRE_SCHEMA_VERSION: u32 = 1;
/// Most constraints a single pair may carry.
pub const MAX_CONSTRAINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    pub objects: Vec<String>,
    pub triplets: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    pub constraints: Vec<AlignmentConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspRecord {
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
    pub width: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    pub grasps: Vec<GraspRecord>,
}

impl From<&GraspCandidate> for GraspRecord {
    fn from(g: &GraspCandidate) -> Self {
        Self { position: g.pose.position.into(), quaternion: g.pose.wxyz(), width: g.width, score: g.score }
    }
}

fn check_version(v: Option<u32>) -> Result<(), String> {
    match v {
        Some(v) if v != WIRE_SCHEMA_VERSION => Err(format!("unsupported schema_version {v}")),
        _ => Ok(()),
    }
}

impl TripletResponse {
    /// Structural checks. References to objects missing from `objects`
    /// are returned as warnings; they only matter against a scene.
    pub fn validate(&self) -> Result<Vec<String>, String> {
        check_version(self.schema_version)?;
        let mut names = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if o.trim().is_empty() {
                return Err(format!("objects[{i}] is empty"));
            }
            if !names.insert(o.trim().to_lowercase()) {
                return Err(format!("objects[{i}] duplicates {o:?}"));
            }
        }
        let mut warnings = Vec::new();
        for (i, t) in self.triplets.iter().enumerate() {
            for (field, v) in [("a", &t.a), ("verb", &t.verb), ("b", &t.b)] {
                if v.trim().is_empty() {
                    return Err(format!("triplets[{i}].{field} is empty"));
                }
            }
            for name in [&t.a, &t.b] {
                if !names.contains(&name.trim().to_lowercase()) {
                    warnings.push(format!("triplets[{i}] references unknown object {name:?}"));
                }
            }
        }
        Ok(warnings)
    }
}

impl ConstraintResponse {
    pub fn validate(&self) -> Result<(), String> {
        check_version(self.schema_version)?;
        if self.constraints.len() > MAX_CONSTRAINTS {
            return Err(format!("{} constraints, at most {MAX_CONSTRAINTS} allowed", self.constraints.len()));
        }
        Ok(())
    }
}

impl GraspRecord {
    pub fn to_candidate(&self) -> Result<GraspCandidate, String> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(format!("width must be positive, got {}", self.width));
        }
        if !self.score.is_finite() {
            return Err("score must be finite".into());
        }
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err("position must be finite".into());
        }
        let pose = Pose::from_wxyz(self.position, self.quaternion)
            .map_err(|e| format!("{e} (tolerance {UNIT_NORM_TOL})"))?;
        Ok(GraspCandidate { pose, width: self.width, score: self.score })
    }
}

impl GraspFixture {
    pub fn validate(&self) -> Result<Vec<GraspCandidate>, String> {
        check_version(self.schema_version)?;
        self.grasps
            .iter()
            .enumerate()
            .map(|(i, g)| g.to_candidate().map_err(|e| format!("grasps[{i}]: {e}")))
            .collect()
    }
}

/// Parses and validates a payload, reporting serde errors with line and column.
pub fn parse_payload<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, String> {
    serde_json::from_str(text).map_err(|e| format!("line {} column {}: {e}", e.line(), e.column()))
}

/// JSON schema for the triplet response, as sent to constrained decoders.
pub fn triplet_json_schema() -> serde_json::Value {
    serde_json::json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["objects", "triplets"],
        "properties": {
            "objects": {"type": "array", "items": {"type": "string", "minLength": 1}},
            "triplets": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["a", "verb", "b"],
                    "properties": {
                        "a": {"type": "string", "minLength": 1},
                        "verb": {"type": "string", "minLength": 1},
                        "b": {"type": "string", "minLength": 1}
                    }
                }
            }
        }
    })
}

pub fn constraint_json_schema() -> serde_json::Value {
    serde_json::json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["constraints"],
        "properties": {
            "constraints": {
                "type": "array",
                "maxItems": MAX_CONSTRAINTS,
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["axis_a", "axis_b", "sign"],
                    "properties": {
                        "axis_a": {"enum": ["X", "Y", "Z"]},
                        "axis_b": {"enum": ["X", "Y", "Z"]},
                        "sign": {"enum": [1, -1]}
                    }
                }
            }
        }
    })
}

pub fn grasp_json_schema() -> serde_json::Value {
    serde_json::json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["grasps"],
        "properties": {
            "schema_version": {"const": WIRE_SCHEMA_VERSION},
            "grasps": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["position", "quaternion", "width", "score"],
                    "properties": {
                        "position": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                        "quaternion": {
                            "description": "[w, x, y, z], unit norm",
                            "type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4
                        },
                        "width": {"type": "number", "minimum": 0},
                        "score": {"type": "number"}
                    }
                }
            }
        }
    })
}
