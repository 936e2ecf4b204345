use std::fmt;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{shortest_arc, GeometryError, RANK_TOL};

/// One of an object's canonical box axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Axis {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "X" => Ok(Axis::X),
            "Y" => Ok(Axis::Y),
            "Z" => Ok(Axis::Z),
            other => Err(GeometryError::InvalidAxis(other.to_string())),
        }
    }
}

/// Aligned (+1) or anti-aligned (-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Sign {
    Aligned,
    AntiAligned,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Aligned => 1.0,
            Sign::AntiAligned => -1.0,
        }
    }
}

impl TryFrom<i64> for Sign {
    type Error = GeometryError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Sign::Aligned),
            -1 => Ok(Sign::AntiAligned),
            other => Err(GeometryError::InvalidSign(other)),
        }
    }
}

impl From<Sign> for i64 {
    fn from(s: Sign) -> i64 {
        match s {
            Sign::Aligned => 1,
            Sign::AntiAligned => -1,
        }
    }
}

/// Axis `axis_a` of the held object should point along `sign` times axis
/// `axis_b` of the target object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConstraint {
    pub axis_a: Axis,
    pub axis_b: Axis,
    pub sign: Sign,
}

impl AlignmentConstraint {
    pub fn new(axis_a: Axis, axis_b: Axis, sign: Sign) -> Self {
        Self { axis_a, axis_b, sign }
    }
}

fn constraint_vectors(
    constraints: &[AlignmentConstraint],
    axes_a: &Matrix3<f64>,
    axes_b: &Matrix3<f64>,
) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    constraints
        .iter()
        .map(|c| {
            (
                axes_a.column(c.axis_a.index()).into_owned(),
                axes_b.column(c.axis_b.index()) * c.sign.value(),
            )
        })
        .collect()
}

/// Sum of squared residuals `|R a_i - s_i b_i|^2` over the constraint set.
pub fn alignment_objective(
    constraints: &[AlignmentConstraint],
    axes_a: &Matrix3<f64>,
    axes_b: &Matrix3<f64>,
    rotation: &Rotation3<f64>,
) -> f64 {
    constraint_vectors(constraints, axes_a, axes_b)
        .iter()
        .map(|(a, t)| (rotation * a - t).norm_squared())
        .sum()
}

/// World-frame rotation that best aligns the held object's axes with the
/// target's under `constraints`, in the least-squares sense.
///
/// A single constraint (or a set whose cross-covariance has rank one) is
/// solved by the shortest arc, so the result is the smallest rotation that
/// achieves the optimum. Otherwise the orthogonal Procrustes solution with
/// determinant correction is returned. An all-cancelling set yields identity.
pub fn solve_alignment(
    constraints: &[AlignmentConstraint],
    axes_a: &Matrix3<f64>,
    axes_b: &Matrix3<f64>,
) -> Result<Rotation3<f64>, GeometryError> {
    let pairs = constraint_vectors(constraints, axes_a, axes_b);
    match pairs.as_slice() {
        [] => Err(GeometryError::EmptyConstraints),
        [(a, t)] => Ok(shortest_arc(a, t).to_rotation_matrix()),
        _ => {
            let b: Matrix3<f64> = pairs.iter().map(|(a, t)| t * a.transpose()).sum();
            Ok(procrustes(&b))
        }
    }
}

/// Maximizes `tr(R^T B)` over SO(3).
fn procrustes(b: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = b.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = Vector3::from_fn(|i, _| svd.singular_values[order[i]]);
    let u = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    let v = Matrix3::from_columns(&[
        v_t.row(order[0]).transpose(),
        v_t.row(order[1]).transpose(),
        v_t.row(order[2]).transpose(),
    ]);

    if s[0] <= RANK_TOL {
        return Rotation3::identity();
    }
    if s[1] <= RANK_TOL {
        // One effective direction: B = s0 u0 v0^T.
        let arc = shortest_arc(&v.column(0).into_owned(), &u.column(0).into_owned());
        return arc.to_rotation_matrix();
    }
    let d = (u * v.transpose()).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v.transpose();
    Rotation3::from_matrix_unchecked(r)
}
