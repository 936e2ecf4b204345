use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{request_hash, AdapterError, AdapterResponse, GraspPlanner};
use crate::control::GraspCandidate;
use crate::geometry::Pose;
use crate::graph::ObjectNode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticGraspParams {
    pub max_width: f64,
    /// Added to the spanned extent to get the opening width.
    pub clearance: f64,
    /// Grasp positions along the long axis.
    pub stations: usize,
    /// Fraction of the long half extent covered by stations.
    pub reach: f64,
    /// Yaw samples for round objects.
    pub yaw_samples: usize,
    /// Relative extent difference under which two axes count as equal.
    pub symmetry_tol: f64,
}

impl Default for AnalyticGraspParams {
    fn default() -> Self {
        Self { max_width: 0.08, clearance: 0.004, stations: 9, reach: 0.7, yaw_samples: 16, symmetry_tol: 0.1 }
    }
}

/// Gripper frame with `approach` as +Z and `closing` as +X.
fn grasp_frame(approach: &Vector3<f64>, closing: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = approach.normalize();
    let x = (closing - z * z.dot(closing)).normalize();
    let m = Matrix3::from_columns(&[x, z.cross(&x), z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

fn span(points: &[&Vector3<f64>], dir: &Vector3<f64>) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let t = p.dot(dir);
        (lo.min(t), hi.max(t))
    })
}

/// Antipodal parallel-jaw grasps sampled on the object's box.
///
/// Stations are spread along the long axis. At each station the local
/// cross-section is measured and the jaws close across one of the two short
/// axes while approaching along the other; approaches from below the table
/// are skipped. Round cross-sections are re-based so one short axis is as
/// vertical as possible, and objects with three equal extents get top-down
/// grasps over evenly spaced yaws. Sections wider than `max_width` yield no
/// grasp, so an object too wide everywhere returns an empty list.
pub fn analytic_grasps(node: &ObjectNode, params: &AnalyticGraspParams) -> Vec<GraspCandidate> {
    let obb = &node.obb;
    let h = obb.half_extents;
    let points: Vec<&Vector3<f64>> = node.point_cloud.iter().collect();
    let mut out = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= params.symmetry_tol * a.max(b);

    if close(h[0], h[2]) {
        let approach = -Vector3::z();
        for k in 0..params.yaw_samples {
            let yaw = k as f64 * std::f64::consts::PI / params.yaw_samples as f64;
            let closing = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
            let (lo, hi) = span(&points, &closing);
            if hi - lo > params.max_width {
                continue;
            }
            let width = (hi - lo + params.clearance).min(params.max_width);
            out.push(GraspCandidate { pose: Pose::new(obb.center, grasp_frame(&approach, &closing)), width, score: 1.0 });
        }
        return out;
    }

    let e1 = obb.axis(crate::geometry::Axis::X);
    let (mut b2, mut b3) = (obb.axis(crate::geometry::Axis::Y), obb.axis(crate::geometry::Axis::Z));
    if close(h[1], h[2]) {
        let up = Vector3::z() - e1 * e1.z;
        if up.norm() > 1e-6 {
            b3 = up.normalize();
            b2 = b3.cross(&e1);
        }
    }
    let slab = (h[0] / params.stations as f64).max(0.005);
    let n = params.stations.max(1);
    for k in 0..n {
        let s = if n == 1 { 0.0 } else { params.reach * h[0] * (2.0 * k as f64 / (n - 1) as f64 - 1.0) };
        let slice: Vec<&Vector3<f64>> =
            points.iter().copied().filter(|p| ((*p - obb.center).dot(&e1) - s).abs() <= slab).collect();
        if slice.is_empty() {
            continue;
        }
        let (lo2, hi2) = span(&slice, &b2);
        let (lo3, hi3) = span(&slice, &b3);
        // (e1, b2, b3) is orthonormal, so a point is the sum of its projections.
        let center = e1 * (obb.center.dot(&e1) + s) + b2 * ((lo2 + hi2) / 2.0) + b3 * ((lo3 + hi3) / 2.0);
        let centrality = 1.0 - 0.2 * (s / h[0]).abs();
        for (approach_axis, closing, extent) in [(b3, b2, hi2 - lo2), (b2, b3, hi3 - lo3)] {
            if extent > params.max_width {
                continue;
            }
            for sign in [1.0, -1.0] {
                let approach = approach_axis * sign;
                if approach.z > 0.25 {
                    continue;
                }
                let width = (extent + params.clearance).min(params.max_width);
                let top_down = (-approach.z).max(0.0);
                out.push(GraspCandidate {
                    pose: Pose::new(center, grasp_frame(&approach, &closing)),
                    width,
                    score: centrality * (0.5 + 0.5 * top_down),
                });
            }
        }
    }
    out
}

/// Grasp planner backed by [`analytic_grasps`].
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticGrasps(pub AnalyticGraspParams);

impl GraspPlanner for AnalyticGrasps {
    fn generate_grasps(&self, node: &ObjectNode) -> Result<AdapterResponse<Vec<GraspCandidate>>, AdapterError> {
        let payload = analytic_grasps(node, &self.0);
        Ok(AdapterResponse {
            payload,
            provenance: "analytic".into(),
            request_hash: request_hash(&serde_json::json!({"kind": "grasps", "object": node.name.to_lowercase()})),
            latency_ms: 0.0,
            transcript: String::new(),
        })
    }
}
