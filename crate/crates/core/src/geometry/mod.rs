//! Pose algebra, rotation utilities, oriented bounding boxes and the
//! axis-alignment rotation solver.
//!
//! Quaternions are stored by nalgebra as `(i, j, k, w)` internally; every
//! serialized form in this crate uses the scalar-first order `[w, x, y, z]`.

mod alignment;
mod obb;
mod pose;
mod rotation;

pub use alignment::{alignment_objective, solve_alignment, AlignmentConstraint, Axis, Sign};
pub use obb::{canonicalize_axes, obb_from_points, OrientedBox};
pub use pose::{flip_about_approach, Pose};
pub use rotation::{
    angle_between, canonical_perpendicular, geodesic_distance, rotate_towards, rotation_angle,
    shortest_arc, unit_quaternion,
};

use thiserror::Error;

pub use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};

/// Allowed deviation of a quaternion norm from 1 before input is rejected.
pub const UNIT_NORM_TOL: f64 = 1e-6;
/// Orthonormality / determinant tolerance for rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-6;
/// Tolerance for composition identities and "already aligned" checks.
pub const COMPOSITION_TOL: f64 = 1e-9;
/// Singular values at or below this are treated as zero by the alignment solver.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("quaternion norm {norm} deviates from 1 by more than {UNIT_NORM_TOL}")]
    NonUnitQuaternion { norm: f64 },
    #[error("rotation step must be finite and non-negative, got {0}")]
    InvalidStep(f64),
    #[error("point set is degenerate: covariance rank {rank}, expected 3")]
    Degenerate { rank: usize },
    #[error("alignment needs at least one constraint")]
    EmptyConstraints,
    #[error("constraint sign must be +1 or -1, got {0}")]
    InvalidSign(i64),
    #[error("unknown axis label {0:?}")]
    InvalidAxis(String),
}

/// True when `m` is orthonormal with determinant +1 within [`ORTHONORMAL_TOL`].
pub fn is_rotation(m: &Matrix3<f64>) -> bool {
    let gram = m.transpose() * m;
    (gram - Matrix3::identity()).abs().max() <= ORTHONORMAL_TOL
        && (m.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
}
