use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::geometry::{angle_between, Pose};

/// A parallel-jaw grasp: gripper pose (+Z approach, X across the jaws),
/// opening width in meters and planner score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    #[serde(flatten)]
    pub pose: Pose,
    pub width: f64,
    pub score: f64,
}

/// Farthest-point subsample of `candidates` by grasp position.
///
/// Seeds from the highest score, then repeatedly adds the candidate whose
/// distance to the chosen set is largest. Ties resolve to the lowest index.
/// Returns everything, in input order, when `m >= candidates.len()`.
pub fn sample_grasps_fps(candidates: &[GraspCandidate], m: usize) -> Result<Vec<GraspCandidate>, ControlError> {
    if candidates.is_empty() {
        return Err(ControlError::NoCandidates);
    }
    if m >= candidates.len() {
        return Ok(candidates.to_vec());
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut seed = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.score > candidates[seed].score {
            seed = i;
        }
    }
    let dist = |i: usize, j: usize| (candidates[i].pose.position - candidates[j].pose.position).norm();
    let mut chosen = vec![seed];
    let mut min_dist: Vec<f64> = (0..candidates.len()).map(|i| dist(i, seed)).collect();
    min_dist[seed] = f64::NEG_INFINITY;
    while chosen.len() < m {
        let mut next = None;
        for (i, &d) in min_dist.iter().enumerate() {
            if d == f64::NEG_INFINITY {
                continue;
            }
            match next {
                Some((_, best)) if d <= best => {}
                _ => next = Some((i, d)),
            }
        }
        let (pick, _) = next.expect("m < n leaves unchosen candidates");
        chosen.push(pick);
        min_dist[pick] = f64::NEG_INFINITY;
        for (i, d) in min_dist.iter_mut().enumerate() {
            if *d != f64::NEG_INFINITY {
                *d = d.min(dist(i, pick));
            }
        }
    }
    Ok(chosen.into_iter().map(|i| candidates[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspSelection {
    pub pose: Pose,
    pub index: usize,
    pub flipped: bool,
}

/// Picks the grasp nearest to the end-effector position (ties: lower index)
/// and returns it or its half-turn about the approach axis, whichever is
/// closer in orientation (ties: unflipped). `None` when there is nothing to
/// assist towards.
pub fn select_grasp_target(eef: &Pose, grasps: &[GraspCandidate]) -> Option<GraspSelection> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in grasps.iter().enumerate() {
        let d = (g.pose.position - eef.position).norm();
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    let (index, _) = best?;
    let pose = grasps[index].pose;
    let flipped = pose.flip_about_approach();
    if angle_between(&flipped.orientation, &eef.orientation) < angle_between(&pose.orientation, &eef.orientation) {
        Some(GraspSelection { pose: flipped, index, flipped: true })
    } else {
        Some(GraspSelection { pose, index, flipped: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Quaternion, UnitQuaternion, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cand(x: f64, y: f64, z: f64, score: f64) -> GraspCandidate {
        GraspCandidate { pose: Pose::from_position(Vector3::new(x, y, z)), width: 0.04, score }
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose::new(
            Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.0..0.5)),
            UnitQuaternion::new_normalize(q),
        )
    }

    #[test]
    fn fps_small_sets_pass_through() {
        let c = vec![cand(0.0, 0.0, 0.0, 0.1), cand(1.0, 0.0, 0.0, 0.9)];
        assert_eq!(sample_grasps_fps(&c, 2).unwrap(), c);
        assert_eq!(sample_grasps_fps(&c, 5).unwrap(), c);
        assert!(matches!(sample_grasps_fps(&[], 3), Err(ControlError::NoCandidates)));
    }

    #[test]
    fn fps_single_pick_is_best_score() {
        let c: Vec<_> = (0..10).map(|i| cand(i as f64, 0.0, 0.0, if i == 6 { 1.0 } else { 0.5 })).collect();
        assert_eq!(sample_grasps_fps(&c, 1).unwrap(), vec![c[6]]);
    }

    #[test]
    fn fps_on_a_line_reaches_the_ends() {
        // Seed at one end: the second pick is the far end.
        let c: Vec<_> = (0..100).map(|i| cand(i as f64 * 0.01, 0.0, 0.0, if i == 0 { 1.0 } else { 0.0 })).collect();
        let picked = sample_grasps_fps(&c, 2).unwrap();
        assert_eq!(picked, vec![c[0], c[99]]);

        // Seed in the middle: the next two picks are both endpoints.
        let c: Vec<_> = (0..100).map(|i| cand(i as f64 * 0.01, 0.0, 0.0, if i == 40 { 1.0 } else { 0.0 })).collect();
        let picked = sample_grasps_fps(&c, 3).unwrap();
        assert_eq!(picked, vec![c[40], c[99], c[0]]);
        // Brute force: the second pick maximizes distance to the seed.
        let far = (0..100)
            .map(|i| (c[i].pose.position - c[40].pose.position).norm())
            .fold(0.0f64, f64::max);
        assert_eq!((picked[1].pose.position - c[40].pose.position).norm(), far);
    }

    #[test]
    fn prefers_flip_when_closer() {
        let grasp = GraspCandidate {
            pose: Pose::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3)),
            width: 0.04,
            score: 1.0,
        };
        let eef = Pose::new(Vector3::new(0.1, 0.0, 0.0), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI));
        let sel = select_grasp_target(&eef, &[grasp]).unwrap();
        assert!(sel.flipped);
        assert!(angle_between(&sel.pose.orientation, &grasp.pose.flip_about_approach().orientation) < 1e-12);
    }

    #[test]
    fn exact_match_stays_unflipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let grasps = [GraspCandidate { pose, width: 0.03, score: 0.2 }];
        let sel = select_grasp_target(&pose, &grasps).unwrap();
        assert_eq!(sel, GraspSelection { pose, index: 0, flipped: false });
        assert!(select_grasp_target(&pose, &[]).is_none());
    }

    proptest! {
        #[test]
        fn selection_matches_exhaustive_scan(seed in any::<u64>(), n in 1usize..=64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eef = random_pose(&mut rng);
            let grasps: Vec<_> = (0..n)
                .map(|_| GraspCandidate { pose: random_pose(&mut rng), width: 0.04, score: rng.random() })
                .collect();
            // Exhaustive lexicographic scan over (distance, index, rotation, flipped).
            let mut best: Option<((f64, usize, f64, bool), Pose)> = None;
            for (i, g) in grasps.iter().enumerate() {
                for flip in [false, true] {
                    let pose = if flip { g.pose.flip_about_approach() } else { g.pose };
                    let key = (
                        (pose.position - eef.position).norm(),
                        i,
                        angle_between(&pose.orientation, &eef.orientation),
                        flip,
                    );
                    if best.as_ref().is_none_or(|(k, _)| key.partial_cmp(k) == Some(std::cmp::Ordering::Less)) {
                        best = Some((key, pose));
                    }
                }
            }
            let ((_, idx, _, flipped), pose) = best.unwrap();
            let sel = select_grasp_target(&eef, &grasps).unwrap();
            prop_assert_eq!(sel.index, idx);
            prop_assert_eq!(sel.flipped, flipped);
            prop_assert!(angle_between(&sel.pose.orientation, &pose.orientation) < 1e-12);
        }
    }
}
