use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{Axis, GeometryError};

/// Relative eigenvalue threshold below which a covariance direction counts as flat.
const RANK_REL_TOL: f64 = 1e-10;

/// Oriented bounding box. Columns of `axes` are the object's canonical X/Y/Z,
/// ordered by decreasing spread of the source points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub axes: Matrix3<f64>,
}

impl OrientedBox {
    pub fn axis(&self, axis: Axis) -> Vector3<f64> {
        self.axes.column(axis.index()).into_owned()
    }

    /// Box after rigidly rotating it by `rotation` about `pivot`.
    pub fn rotated_about(&self, rotation: &UnitQuaternion<f64>, pivot: &Vector3<f64>) -> OrientedBox {
        let r = rotation.to_rotation_matrix();
        OrientedBox {
            center: pivot + r * (self.center - pivot),
            half_extents: self.half_extents,
            axes: r.matrix() * self.axes,
        }
    }

    /// Box expressed in a parent frame given the pose of its own frame.
    pub fn transformed(&self, pose: &super::Pose) -> OrientedBox {
        let r = pose.orientation.to_rotation_matrix();
        OrientedBox {
            center: pose.transform_point(&self.center),
            half_extents: self.half_extents,
            axes: r.matrix() * self.axes,
        }
    }

    /// Coordinates of `p` in the box frame.
    pub fn local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (p - self.center)
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let l = self.local(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i] + tol)
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        let l = self.local(p);
        let outside = Vector3::from_fn(|i, _| (l[i].abs() - self.half_extents[i]).max(0.0));
        outside.norm()
    }
}

/// Sign-canonicalizes the columns of an orthonormal basis: each column is
/// flipped so its largest-magnitude component is positive (ties resolve to
/// the lowest coordinate index), then the last column is flipped if needed
/// to make the determinant +1.
pub fn canonicalize_axes(axes: Matrix3<f64>) -> Matrix3<f64> {
    let mut out = axes;
    for c in 0..3 {
        let mut col = out.column_mut(c);
        let mut best = 0;
        for i in 1..3 {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    if out.determinant() < 0.0 {
        out.column_mut(2).neg_mut();
    }
    out
}

/// PCA bounding box of a point cloud.
///
/// Axes are the covariance eigenvectors by descending eigenvalue (ties keep
/// the solver's order), canonicalized with [`canonicalize_axes`]. Extents are
/// the exact min/max of the projections, so every input point lies inside.
pub fn obb_from_points(points: &[Vector3<f64>]) -> Result<OrientedBox, GeometryError> {
    if points.len() < 4 {
        let rank = covariance_rank(points);
        return Err(GeometryError::Degenerate { rank });
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let cov = covariance(points, &mean);
    let eig = SymmetricEigen::new(cov);
    let rank = rank_of(&eig.eigenvalues);
    if rank < 3 {
        return Err(GeometryError::Degenerate { rank });
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sorted = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    let axes = canonicalize_axes(sorted);

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let l = axes.transpose() * (p - mean);
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    let mid = (lo + hi) / 2.0;
    Ok(OrientedBox { center: mean + axes * mid, half_extents: (hi - lo) / 2.0, axes })
}

fn covariance(points: &[Vector3<f64>], mean: &Vector3<f64>) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / points.len() as f64
}

fn rank_of(eigenvalues: &Vector3<f64>) -> usize {
    let max = eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return 0;
    }
    eigenvalues.iter().filter(|&&v| v > max * RANK_REL_TOL).count()
}

fn covariance_rank(points: &[Vector3<f64>]) -> usize {
    if points.is_empty() {
        return 0;
    }
    let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    rank_of(&SymmetricEigen::new(covariance(points, &mean)).eigenvalues)
}
