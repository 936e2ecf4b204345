//! Primitive solids in an object-local frame whose resting base is the
//! plane z = 0, and uniform surface sampling over them.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CylinderAxis {
    /// Standing on its base.
    Z,
    /// Lying along local X.
    X,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    /// Axis-aligned box `size = [x, y, z]` centered on the local origin horizontally.
    Box { size: [f64; 3] },
    Cylinder {
        radius: f64,
        length: f64,
        axis: CylinderAxis,
        /// Omit the top cap (standing cylinders only), as for a cup.
        #[serde(default)]
        open_top: bool,
    },
    Composite { parts: Vec<Part> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part {
    pub shape: Shape,
    /// Where this part's local origin sits in the parent frame.
    #[serde(default)]
    pub offset: [f64; 3],
}

/// One sampled surface patch: area and a sampler returning a point on it.
struct Patch {
    area: f64,
    origin: Vector3<f64>,
    kind: PatchKind,
}

enum PatchKind {
    Rect { u: Vector3<f64>, v: Vector3<f64> },
    Disk { radius: f64, normal_axis: usize },
    Tube { radius: f64, length: f64, axis: usize },
}

impl Shape {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::Spec(format!("{what} must be positive and finite")));
        match self {
            Shape::Box { size } => {
                if size.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return bad("box size");
                }
            }
            Shape::Cylinder { radius, length, axis, open_top } => {
                if !(radius.is_finite() && *radius > 0.0 && length.is_finite() && *length > 0.0) {
                    return bad("cylinder radius and length");
                }
                if *open_top && *axis != CylinderAxis::Z {
                    return Err(SimError::Spec("open_top needs a standing cylinder".into()));
                }
            }
            Shape::Composite { parts } => {
                if parts.is_empty() {
                    return Err(SimError::Spec("composite needs at least one part".into()));
                }
                for p in parts {
                    if p.offset.iter().any(|v| !v.is_finite()) {
                        return Err(SimError::Spec("part offset must be finite".into()));
                    }
                    p.shape.validate()?;
                }
            }
        }
        Ok(())
    }

    fn patches(&self, offset: Vector3<f64>, out: &mut Vec<Patch>) {
        match self {
            Shape::Box { size } => {
                let h = Vector3::new(size[0] / 2.0, size[1] / 2.0, size[2] / 2.0);
                let c = offset + Vector3::new(0.0, 0.0, h.z);
                for axis in 0..3 {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let mut u = Vector3::zeros();
                    u[a] = 2.0 * h[a];
                    let mut v = Vector3::zeros();
                    v[b] = 2.0 * h[b];
                    for side in [-1.0, 1.0] {
                        let mut face = c - u / 2.0 - v / 2.0;
                        face[axis] += side * h[axis];
                        out.push(Patch { area: u.norm() * v.norm(), origin: face, kind: PatchKind::Rect { u, v } });
                    }
                }
            }
            Shape::Cylinder { radius, length, axis, open_top } => {
                let (ax, start) = match axis {
                    CylinderAxis::Z => (2, offset),
                    CylinderAxis::X => (0, offset + Vector3::new(-length / 2.0, 0.0, *radius)),
                };
                out.push(Patch {
                    area: 2.0 * PI * radius * length,
                    origin: start,
                    kind: PatchKind::Tube { radius: *radius, length: *length, axis: ax },
                });
                let mut end = start;
                end[ax] += length;
                let disk = |origin| Patch { area: PI * radius * radius, origin, kind: PatchKind::Disk { radius: *radius, normal_axis: ax } };
                out.push(disk(start));
                if !open_top {
                    out.push(disk(end));
                }
            }
            Shape::Composite { parts } => {
                for p in parts {
                    p.shape.patches(offset + Vector3::from(p.offset), out);
                }
            }
        }
    }

    /// Total sampled surface area.
    pub fn area(&self) -> f64 {
        let mut patches = Vec::new();
        self.patches(Vector3::zeros(), &mut patches);
        patches.iter().map(|p| p.area).sum()
    }

    /// `round(density * area)` points (at least 8) drawn uniformly over the surface.
    pub fn sample_surface(&self, density: f64, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
        let mut patches = Vec::new();
        self.patches(Vector3::zeros(), &mut patches);
        let total: f64 = patches.iter().map(|p| p.area).sum();
        let n = ((density * total).round() as usize).max(8);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pick = rng.random::<f64>() * total;
            let patch = patches
                .iter()
                .find(|p| {
                    pick -= p.area;
                    pick <= 0.0
                })
                .unwrap_or_else(|| patches.last().expect("shapes have patches"));
            out.push(sample_patch(patch, rng));
        }
        out
    }
}

fn axis_frame(axis: usize) -> (Vector3<f64>, Vector3<f64>) {
    let mut a = Vector3::zeros();
    a[(axis + 1) % 3] = 1.0;
    let mut b = Vector3::zeros();
    b[(axis + 2) % 3] = 1.0;
    (a, b)
}

fn sample_patch(patch: &Patch, rng: &mut impl Rng) -> Vector3<f64> {
    match &patch.kind {
        PatchKind::Rect { u, v } => patch.origin + u * rng.random::<f64>() + v * rng.random::<f64>(),
        PatchKind::Disk { radius, normal_axis } => {
            let (a, b) = axis_frame(*normal_axis);
            let r = radius * rng.random::<f64>().sqrt();
            let t = rng.random::<f64>() * 2.0 * PI;
            patch.origin + (a * t.cos() + b * t.sin()) * r
        }
        PatchKind::Tube { radius, length, axis } => {
            let (a, b) = axis_frame(*axis);
            let t = rng.random::<f64>() * 2.0 * PI;
            let mut along = Vector3::zeros();
            along[*axis] = length * rng.random::<f64>();
            patch.origin + along + (a * t.cos() + b * t.sin()) * *radius
        }
    }
}
