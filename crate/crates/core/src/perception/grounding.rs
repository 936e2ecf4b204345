use std::collections::BTreeMap;

use image::RgbImage;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::geometry::Pose;
use crate::graph::Mask;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One RGB-D observation with per-object masks.
#[derive(Debug, Clone)]
pub struct SceneDescription {
    pub width: usize,
    pub height: usize,
    pub image: Option<RgbImage>,
    /// Row-major depth in meters; non-finite or non-positive means missing.
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Camera frame expressed in the world frame.
    pub extrinsics: Pose,
    pub masks: BTreeMap<String, Mask>,
}

impl SceneDescription {
    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }
}

/// Back-projects the masked pixels into world points and returns their
/// centroid with the cloud. Pixels without valid depth are skipped.
pub fn ground_mask(scene: &SceneDescription, mask: &Mask) -> Result<(Vector3<f64>, Vec<Vector3<f64>>), AdapterError> {
    let k = scene.intrinsics;
    if !(k.fx.is_finite() && k.fy.is_finite() && k.fx > 0.0 && k.fy > 0.0) {
        return Err(AdapterError::Grounding("focal lengths must be positive".into()));
    }
    if mask.width != scene.width || mask.height != scene.height || scene.depth.len() != scene.width * scene.height {
        return Err(AdapterError::Grounding(format!(
            "mask {}x{} does not match scene {}x{} with {} depth values",
            mask.width,
            mask.height,
            scene.width,
            scene.height,
            scene.depth.len()
        )));
    }
    let mut cloud = Vec::new();
    for (u, v) in mask.pixels() {
        let z = scene.depth_at(u, v);
        if !(z.is_finite() && z > 0.0) {
            continue;
        }
        let cam = Vector3::new((u as f64 - k.cx) * z / k.fx, (v as f64 - k.cy) * z / k.fy, z);
        cloud.push(scene.extrinsics.transform_point(&cam));
    }
    if cloud.is_empty() {
        return Err(AdapterError::Grounding("no masked pixel has valid depth".into()));
    }
    let center = cloud.iter().sum::<Vector3<f64>>() / cloud.len() as f64;
    Ok((center, cloud))
}
