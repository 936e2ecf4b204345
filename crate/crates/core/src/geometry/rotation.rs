use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};

use super::{GeometryError, COMPOSITION_TOL, UNIT_NORM_TOL};

/// Validates that `q` is a unit quaternion and wraps it. Inputs already
/// unit to rounding error are kept bit-for-bit; others are renormalized.
pub fn unit_quaternion(q: &Quaternion<f64>) -> Result<UnitQuaternion<f64>, GeometryError> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(GeometryError::NonUnitQuaternion { norm });
    }
    if (norm - 1.0).abs() <= 8.0 * f64::EPSILON {
        return Ok(UnitQuaternion::new_unchecked(*q));
    }
    Ok(UnitQuaternion::new_normalize(*q))
}

/// Rotation angle in `[0, pi]` of `q`, treating `q` and `-q` as the same rotation.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    // atan2 stays accurate near 0 and pi where acos(w) does not.
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// Minimal angle between two orientations.
pub fn angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    rotation_angle(&(a.inverse() * b))
}

/// Geodesic distance on SO(3) between two quaternions, validating both.
pub fn geodesic_distance(a: &Quaternion<f64>, b: &Quaternion<f64>) -> Result<f64, GeometryError> {
    let a = unit_quaternion(a)?;
    let b = unit_quaternion(b)?;
    Ok(angle_between(&a, &b))
}

/// Moves `current` along the shortest geodesic towards `target` by at most `max_step` radians.
///
/// Returns `target` itself when it is within reach.
pub fn rotate_towards(
    current: &UnitQuaternion<f64>,
    target: &UnitQuaternion<f64>,
    max_step: f64,
) -> Result<UnitQuaternion<f64>, GeometryError> {
    if !max_step.is_finite() || max_step < 0.0 {
        return Err(GeometryError::InvalidStep(max_step));
    }
    let mut delta = current.inverse() * target;
    if delta.w < 0.0 {
        delta = UnitQuaternion::new_unchecked(-delta.into_inner());
    }
    let remaining = rotation_angle(&delta);
    if max_step >= remaining {
        return Ok(*target);
    }
    if max_step == 0.0 {
        return Ok(*current);
    }
    // remaining > max_step > 0, so the imaginary part is non-zero.
    let axis = Unit::new_normalize(delta.imag());
    Ok(current * UnitQuaternion::from_axis_angle(&axis, max_step))
}

/// Unit vector perpendicular to `v` used to break the antipodal tie:
/// world +Z projected off `v`, or world +X when `v` is (anti)parallel to Z.
pub fn canonical_perpendicular(v: &Vector3<f64>) -> Unit<Vector3<f64>> {
    let v = v.normalize();
    let project = |w: Vector3<f64>| w - v * v.dot(&w);
    let z = project(Vector3::z());
    if z.norm() > 1e-6 {
        Unit::new_normalize(z)
    } else {
        Unit::new_normalize(project(Vector3::x()))
    }
}

/// Smallest rotation taking direction `from` onto direction `to`.
///
/// Aligned inputs give the identity; antipodal inputs give a half-turn about
/// [`canonical_perpendicular`] of `from`.
pub fn shortest_arc(from: &Vector3<f64>, to: &Vector3<f64>) -> UnitQuaternion<f64> {
    let f = from.normalize();
    let t = to.normalize();
    let cross = f.cross(&t);
    let sin = cross.norm();
    let cos = f.dot(&t);
    if sin <= COMPOSITION_TOL {
        if cos > 0.0 {
            UnitQuaternion::identity()
        } else {
            UnitQuaternion::from_axis_angle(&canonical_perpendicular(&f), std::f64::consts::PI)
        }
    } else {
        UnitQuaternion::from_axis_angle(&Unit::new_unchecked(cross / sin), sin.atan2(cos))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn quat_strategy() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-zero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)))
    }

    // Angle from the rotation-matrix trace; an independent route from the quaternion formula.
    fn trace_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
        let ra: Matrix3<f64> = a.to_rotation_matrix().into_inner();
        let rb: Matrix3<f64> = b.to_rotation_matrix().into_inner();
        let rel = ra.transpose() * rb;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn identical_rotations_are_zero_apart() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1);
        assert_eq!(angle_between(&q, &q), 0.0);
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let d = geodesic_distance(&Quaternion::identity(), q.quaternion()).unwrap();
        assert!((d - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_unit_input() {
        let q = Quaternion::new(1.0, 0.0, 0.0, 1e-2);
        assert!(matches!(
            geodesic_distance(&q, &Quaternion::identity()),
            Err(GeometryError::NonUnitQuaternion { .. })
        ));
        // Within tolerance is accepted.
        let q = Quaternion::new(1.0 + 5e-7, 0.0, 0.0, 0.0);
        assert!(geodesic_distance(&q, &Quaternion::identity()).is_ok());
    }

    #[test]
    fn rotate_towards_examples() {
        let cur = UnitQuaternion::identity();
        let tgt = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.5);
        let mid = rotate_towards(&cur, &tgt, 0.2).unwrap();
        assert!((angle_between(&mid, &tgt) - 0.3).abs() < 1e-9);
        assert!((angle_between(&cur, &mid) - 0.2).abs() < 1e-9);

        assert_eq!(rotate_towards(&cur, &tgt, 0.0).unwrap(), cur);
        assert_eq!(rotate_towards(&cur, &tgt, 0.5).unwrap(), tgt);
        assert_eq!(rotate_towards(&cur, &tgt, 3.0).unwrap(), tgt);
        assert!(rotate_towards(&cur, &tgt, -0.1).is_err());
    }

    #[test]
    fn rotate_towards_takes_short_way_round_double_cover() {
        let cur = UnitQuaternion::identity();
        let tgt = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.4);
        let flipped = UnitQuaternion::new_unchecked(-tgt.into_inner());
        let step = rotate_towards(&cur, &flipped, 0.1).unwrap();
        assert!((angle_between(&step, &tgt) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn shortest_arc_antipodal_uses_z_then_x() {
        let r = shortest_arc(&Vector3::x(), &-Vector3::x());
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
        assert!(angle_between(&r, &expected) < 1e-12);

        let r = shortest_arc(&Vector3::z(), &-Vector3::z());
        let expected = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI);
        assert!(angle_between(&r, &expected) < 1e-12);
    }

    proptest! {
        #[test]
        fn geodesic_matches_trace_oracle(a in quat_strategy(), b in quat_strategy()) {
            let d = geodesic_distance(a.quaternion(), b.quaternion()).unwrap();
            let oracle = trace_angle(&a, &b);
            // acos is ill-conditioned near 0 and pi, so compare the cosines there.
            prop_assert!((d.cos() - oracle.cos()).abs() < 1e-9);
            prop_assert!((d - oracle).abs() < 1e-6);
            prop_assert!((0.0..=PI).contains(&d));
        }

        #[test]
        fn geodesic_is_symmetric_and_double_cover_invariant(a in quat_strategy(), b in quat_strategy()) {
            prop_assert!((angle_between(&a, &b) - angle_between(&b, &a)).abs() < 1e-12);
            let neg = UnitQuaternion::new_unchecked(-a.into_inner());
            prop_assert!(angle_between(&a, &neg) < 1e-12);
        }

        #[test]
        fn rotate_towards_stays_on_geodesic(a in quat_strategy(), b in quat_strategy(), step in 0.0..3.5f64) {
            let dist = angle_between(&a, &b);
            let r = rotate_towards(&a, &b, step).unwrap();
            prop_assert!((angle_between(&r, &b) - (dist - step).max(0.0)).abs() < 1e-9);
            prop_assert!((angle_between(&a, &r) - step.min(dist)).abs() < 1e-9);
        }

        #[test]
        fn shortest_arc_maps_from_onto_to(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                                          u in -1.0..1.0f64, v in -1.0..1.0f64, w in -1.0..1.0f64) {
            let f = Vector3::new(x, y, z);
            let t = Vector3::new(u, v, w);
            prop_assume!(f.norm() > 1e-3 && t.norm() > 1e-3);
            let r = shortest_arc(&f, &t);
            prop_assert!((r * f.normalize() - t.normalize()).norm() < 1e-9);
            let angle = f.normalize().dot(&t.normalize()).clamp(-1.0, 1.0).acos();
            prop_assert!((rotation_angle(&r) - angle).abs() < 1e-7);
        }
    }
}
