//! Interaction graph: grounded scene objects as nodes, functional
//! "A acts on B" verbs as directed edges, and the stage-dependent candidate
//! goal sets derived from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{obb_from_points, GeometryError, OrientedBox};

/// Slack around a cloud's axis-aligned bounds within which the node center must lie.
pub const CENTER_BOUNDS_SLACK: f64 = 0.05;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate object name {0:?} (names are compared case-insensitively)")]
    DuplicateName(String),
    #[error("object {0:?} has an empty point cloud")]
    EmptyCloud(String),
    #[error("object {name:?}: center lies outside its point cloud bounds")]
    CenterOutsideCloud { name: String },
    #[error("object {name:?}: {source}")]
    Geometry { name: String, source: GeometryError },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("malformed graph document: {0}")]
    Document(String),
}

/// Binary segmentation mask in image coordinates, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }
}

/// Perception output for one object before it is placed in a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedObject {
    pub name: String,
    pub center: Vector3<f64>,
    pub point_cloud: Vec<Vector3<f64>>,
    pub mask: Option<Mask>,
}

impl GroundedObject {
    pub fn new(name: impl Into<String>, center: Vector3<f64>, point_cloud: Vec<Vector3<f64>>) -> Self {
        Self { name: name.into(), center, point_cloud, mask: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub id: NodeId,
    pub name: String,
    pub center: Vector3<f64>,
    pub point_cloud: Vec<Vector3<f64>>,
    pub mask: Option<Mask>,
    pub obb: OrientedBox,
}

impl ObjectNode {
    pub fn new(id: NodeId, object: GroundedObject) -> Result<Self, GraphError> {
        let GroundedObject { name, center, point_cloud, mask } = object;
        if point_cloud.is_empty() {
            return Err(GraphError::EmptyCloud(name));
        }
        let (lo, hi) = point_cloud.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        let inside = (0..3).all(|i| {
            center[i] >= lo[i] - CENTER_BOUNDS_SLACK && center[i] <= hi[i] + CENTER_BOUNDS_SLACK
        });
        if !inside {
            return Err(GraphError::CenterOutsideCloud { name });
        }
        let obb = obb_from_points(&point_cloud)
            .map_err(|source| GraphError::Geometry { name: name.clone(), source })?;
        Ok(Self { id, name, center, point_cloud, mask, obb })
    }
}

/// `(object_A, verb, object_B)`: A can act on B via the verb.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub a: String,
    pub verb: String,
    pub b: String,
}

impl Triplet {
    pub fn new(a: impl Into<String>, verb: impl Into<String>, b: impl Into<String>) -> Self {
        Self { a: a.into(), verb: verb.into(), b: b.into() }
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.a, self.verb, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InteractionEdge {
    pub source: NodeId,
    pub target: NodeId,
    pub verb: String,
}

/// Triplets that could not become edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphDiagnostic {
    UnknownObject { triplet: Triplet, name: String },
    SelfReference { triplet: Triplet },
    DuplicateEdge { triplet: Triplet },
}

impl fmt::Display for GraphDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphDiagnostic::UnknownObject { triplet, name } => {
                write!(f, "triplet {triplet}: no object named {name:?}")
            }
            GraphDiagnostic::SelfReference { triplet } => write!(f, "triplet {triplet}: object acts on itself"),
            GraphDiagnostic::DuplicateEdge { triplet } => write!(f, "triplet {triplet}: duplicate edge"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    nodes: Vec<ObjectNode>,
    edges: Vec<InteractionEdge>,
}

#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: InteractionGraph,
    pub diagnostics: Vec<GraphDiagnostic>,
}

fn fold_name(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Builds the graph. Node ids follow the order of `objects`; triplet names
/// are joined to object names case-insensitively.
pub fn build_graph(objects: Vec<GroundedObject>, triplets: &[Triplet]) -> Result<GraphBuild, GraphError> {
    let mut by_name = BTreeMap::new();
    let mut nodes = Vec::with_capacity(objects.len());
    for (i, obj) in objects.into_iter().enumerate() {
        let id = NodeId(i as u32);
        if by_name.insert(fold_name(&obj.name), id).is_some() {
            return Err(GraphError::DuplicateName(obj.name));
        }
        nodes.push(ObjectNode::new(id, obj)?);
    }

    let mut diagnostics = Vec::new();
    let mut edges = BTreeSet::new();
    for t in triplets {
        let lookup = |name: &str| by_name.get(&fold_name(name)).copied();
        let (source, target) = match (lookup(&t.a), lookup(&t.b)) {
            (Some(s), Some(d)) => (s, d),
            (None, _) => {
                diagnostics.push(GraphDiagnostic::UnknownObject { triplet: t.clone(), name: t.a.clone() });
                continue;
            }
            (_, None) => {
                diagnostics.push(GraphDiagnostic::UnknownObject { triplet: t.clone(), name: t.b.clone() });
                continue;
            }
        };
        if source == target {
            diagnostics.push(GraphDiagnostic::SelfReference { triplet: t.clone() });
            continue;
        }
        let edge = InteractionEdge { source, target, verb: t.verb.trim().to_string() };
        if !edges.insert(edge) {
            diagnostics.push(GraphDiagnostic::DuplicateEdge { triplet: t.clone() });
        }
    }
    Ok(GraphBuild { graph: InteractionGraph { nodes, edges: edges.into_iter().collect() }, diagnostics })
}

impl InteractionGraph {
    pub fn nodes(&self) -> &[ObjectNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[InteractionEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&ObjectNode> {
        self.nodes.get(id.0 as usize)
    }

    pub fn node_by_name(&self, name: &str) -> Option<&ObjectNode> {
        let key = fold_name(name);
        self.nodes.iter().find(|n| fold_name(&n.name) == key)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        (id.0 as usize) < self.nodes.len()
    }

    pub fn out_degree(&self, id: NodeId) -> usize {
        self.edges.iter().filter(|e| e.source == id).count()
    }

    /// Distinct targets of edges leaving `id`, by id.
    pub fn out_neighbors(&self, id: NodeId) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self.edges.iter().filter(|e| e.source == id).map(|e| e.target).collect();
        set.into_iter().collect()
    }

    /// Verbs on edges from `a` to `b`.
    pub fn verbs(&self, a: NodeId, b: NodeId) -> Vec<&str> {
        self.edges.iter().filter(|e| e.source == a && e.target == b).map(|e| e.verb.as_str()).collect()
    }

    /// Candidate goals while nothing is held: every node that can act on another.
    pub fn grasp_stage_goals(&self) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self.edges.iter().map(|e| e.source).collect();
        set.into_iter().collect()
    }

    /// Candidate goals once `grasped` is held: the objects it acts on.
    pub fn interaction_stage_goals(&self, grasped: NodeId) -> Result<Vec<NodeId>, GraphError> {
        if !self.contains(grasped) {
            return Err(GraphError::UnknownNode(grasped));
        }
        Ok(self.out_neighbors(grasped))
    }

    /// Graph relabelled by name: sorted names and name-level edges. Equal for
    /// graphs built from the same objects and triplets in any order.
    pub fn canonical_form(&self) -> (Vec<String>, Vec<(String, String, String)>) {
        let name = |id: NodeId| fold_name(&self.nodes[id.0 as usize].name);
        let mut names: Vec<String> = self.nodes.iter().map(|n| fold_name(&n.name)).collect();
        names.sort();
        let mut edges: Vec<_> =
            self.edges.iter().map(|e| (name(e.source), e.verb.clone(), name(e.target))).collect();
        edges.sort();
        (names, edges)
    }

    pub fn to_document(&self, include_clouds: bool) -> GraphDocument {
        GraphDocument {
            schema_version: GRAPH_SCHEMA_VERSION,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    name: n.name.clone(),
                    center: n.center.into(),
                    point_cloud: include_clouds.then(|| n.point_cloud.iter().map(|p| (*p).into()).collect()),
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }

    /// Rebuilds a graph from a document that carries point clouds.
    pub fn from_document(doc: &GraphDocument) -> Result<Self, GraphError> {
        if doc.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::Document(format!("unsupported schema version {}", doc.schema_version)));
        }
        let mut records: Vec<&NodeRecord> = doc.nodes.iter().collect();
        records.sort_by_key(|r| r.id);
        let mut seen = BTreeSet::new();
        let mut nodes = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.id != NodeId(i as u32) {
                return Err(GraphError::Document(format!("node ids must be 0..n, found {}", r.id)));
            }
            if !seen.insert(fold_name(&r.name)) {
                return Err(GraphError::DuplicateName(r.name.clone()));
            }
            let cloud = r
                .point_cloud
                .as_ref()
                .ok_or_else(|| GraphError::Document(format!("node {} has no point cloud", r.id)))?;
            let object = GroundedObject::new(
                r.name.clone(),
                Vector3::from(r.center),
                cloud.iter().map(|p| Vector3::from(*p)).collect(),
            );
            nodes.push(ObjectNode::new(r.id, object)?);
        }
        let mut edges = BTreeSet::new();
        for e in &doc.edges {
            for id in [e.source, e.target] {
                if (id.0 as usize) >= nodes.len() {
                    return Err(GraphError::UnknownNode(id));
                }
            }
            if e.source == e.target {
                return Err(GraphError::Document(format!("self edge on node {}", e.source)));
            }
            edges.insert(e.clone());
        }
        Ok(Self { nodes, edges: edges.into_iter().collect() })
    }
}

/// Canonical JSON form of an [`InteractionGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub schema_version: u32,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<InteractionEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    pub name: String,
    pub center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_cloud: Option<Vec<[f64; 3]>>,
}
