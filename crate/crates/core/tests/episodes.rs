use tasc_core::batch::{run_batch, BatchSpec};
use tasc_core::control::{GripperAction, Method, StageKind};
use tasc_core::perception::{AnalyticGrasps, FixtureStore};
use tasc_core::sim::*;
use tasc_core::telemetry::*;

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

fn tabletop() -> ScenarioSpec {
    ScenarioSpec::from_path(format!("{ROOT}/scenarios/tabletop.json")).unwrap()
}

fn run(task: &str, method: Method, seed: u64, user: UserSpec) -> Episode {
    let store = FixtureStore::new(format!("{ROOT}/fixtures"));
    let cfg = EpisodeConfig::new(tabletop(), seed, task, method, user);
    run_episode(cfg, &store, &AnalyticGrasps(Default::default())).unwrap()
}

fn user(policy: UserPolicy) -> UserSpec {
    let mut u = UserSpec::straight(0.0);
    u.policy = policy;
    u
}

#[test]
fn idle_user_never_moves_or_rotates() {
    let ep = run("insert", Method::Tasc, 0, user(UserPolicy::Idle));
    assert!(!ep.report.success);
    assert_eq!(ep.report.inputs, 0);
    assert_eq!(ep.report.trajectory_length, 0.0);
    let start = ep.telemetry.setup.config.scenario.eef_start;
    for t in &ep.telemetry.ticks {
        assert_eq!(t.u_r, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.eef, start);
    }
}

#[test]
fn straight_waypoint_has_exact_length() {
    let ep = run("place", Method::Teleop, 0, user(UserPolicy::Waypoints { points: vec![[0.3, 0.0, 0.3]], sigma: 0.0 }));
    let moving = ep.telemetry.ticks.iter().filter(|t| t.input.u_h.norm() > 0.0).count();
    assert_eq!(moving, 30);
    assert!((ep.report.trajectory_length - 0.3).abs() < 1e-9, "{}", ep.report.trajectory_length);
    assert_eq!(ep.report.inputs, 30);
    assert_eq!(ep.telemetry.trajectory_length(), ep.report.trajectory_length);
}

#[test]
fn assisted_episode_walks_the_stage_chain() {
    let ep = run("hammer", Method::Tasc, 4, UserSpec::straight(0.002));
    assert!(ep.report.success, "{:?}", ep.report.reason);
    assert_eq!(ep.report.stages, [StageKind::Grasping, StageKind::AutoGrasp, StageKind::Interaction, StageKind::Done]);
    assert_eq!(ep.telemetry.summary.as_ref(), Some(&ep.report));
    assert_eq!(ep.telemetry.input_count(), ep.report.inputs);
    assert_eq!(ep.telemetry.trajectory_length(), ep.report.trajectory_length);
    assert_eq!(ep.telemetry.ticks.last().unwrap().state_hash, ep.report.final_state_hash);
}

#[test]
fn telemetry_round_trips_and_replays() {
    let ep = run("insert", Method::Tasc, 7, UserSpec::straight(0.002));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    ep.telemetry.write(&path).unwrap();
    let back = Telemetry::read(&path).unwrap();
    assert_eq!(back, ep.telemetry);
    let r = replay(&back).unwrap();
    assert!(r.matched);
    assert_eq!(r.ticks_checked, ep.report.ticks);
    assert_eq!(r.final_state_hash, ep.report.final_state_hash);
}

#[test]
fn tampered_input_is_reported_at_its_tick() {
    let ep = run("place", Method::Tasc, 1, UserSpec::straight(0.002));
    let mut t = ep.telemetry.clone();
    t.ticks[40].input.u_h.x += 1e-9;
    let r = replay(&t).unwrap();
    assert!(!r.matched);
    let d = r.first_divergence.unwrap();
    assert_eq!(d.tick, t.ticks[40].tick);
    assert_eq!(r.ticks_checked, 41);
}

#[test]
fn truncated_or_headerless_logs_are_rejected() {
    let ep = run("place", Method::Teleop, 1, UserSpec::straight(0.002));
    let text = ep.telemetry.to_jsonl();
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert!(Telemetry::from_jsonl(&body).is_err());
    assert!(Telemetry::from_jsonl(&text[..text.len() / 2]).is_err());
}

#[test]
fn belief_csv_has_one_row_per_goal_and_tick() {
    let ep = run("hammer", Method::Tasc, 2, UserSpec::straight(0.002));
    let csv = belief_csv(&ep.telemetry);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tick,stage,goal,probability,argmax,true_goal"));
    let expected: usize = ep.telemetry.ticks.iter().map(|t| t.belief.len()).sum();
    assert_eq!(lines.clone().count(), expected);
    for l in lines {
        let p: f64 = l.split(',').nth(3).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    let c = approach_convergence(&ep.telemetry);
    assert_eq!(c.grasping, Some(1.0));
}

#[test]
fn teleop_has_no_belief_and_direct_grasp() {
    let ep = run("place", Method::Teleop, 0, UserSpec::straight(0.002));
    assert!(ep.report.success);
    assert!(ep.telemetry.ticks.iter().all(|t| t.belief.is_empty() && t.assist_target.is_none()));
    assert!(!ep.report.stages.contains(&StageKind::AutoGrasp));
    assert!(ep.telemetry.ticks.iter().any(|t| t.input.gripper == GripperAction::Close));
}

#[test]
fn redirected_user_flips_the_argmax_after_switching() {
    let switch_tick = 40;
    let u = user(UserPolicy::Redirecting { decoy: "mug".into(), switch_tick, sigma: 0.0 });
    let ep = run("place", Method::Tasc, 3, u);
    assert!(ep.report.success, "{:?}", ep.report.reason);
    let before = &ep.telemetry.ticks[switch_tick as usize - 1];
    assert_ne!(before.argmax.as_deref(), Some("banana"));
    let lag = ep.telemetry.ticks[switch_tick as usize..]
        .iter()
        .position(|t| t.argmax.as_deref() == Some("banana"))
        .expect("argmax reaches the banana");
    assert!(lag < 40, "lag {lag}");
}

fn batch_spec(seeds: Vec<u64>) -> BatchSpec {
    BatchSpec {
        scenario: format!("{ROOT}/scenarios/tabletop.json").into(),
        fixtures: format!("{ROOT}/fixtures").into(),
        adapter_mode: Default::default(),
        user: UserSpec::straight(0.002),
        methods: vec![Method::Tasc, Method::Teleop],
        tasks: vec!["insert".into()],
        seeds,
        cost: Default::default(),
        assist: Default::default(),
        workers: Some(3),
    }
}

#[test]
fn batch_csv_ignores_seed_order_and_worker_count() {
    let store = FixtureStore::new(format!("{ROOT}/fixtures"));
    let planner = AnalyticGrasps(Default::default());
    let a = run_batch(&batch_spec(vec![0, 1, 2, 3]), &tabletop(), &store, &planner, false).unwrap();
    let mut spec = batch_spec(vec![3, 1, 0, 2]);
    spec.workers = Some(1);
    let b = run_batch(&spec, &tabletop(), &store, &planner, false).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let csv = a.to_csv();
    assert_eq!(csv.lines().next(), Some("task,method,seed,success,time_s,trajectory_length_m,inputs,ticks,reason"));
    assert_eq!(csv.lines().count(), 1 + 8 + 2);
    let means = a.means();
    assert_eq!(means[&("insert".to_string(), Method::Tasc)].success_rate, 1.0);
    assert_eq!(means[&("insert".to_string(), Method::Teleop)].success_rate, 0.0);
}

#[test]
fn batch_rejects_unknown_task() {
    let store = FixtureStore::new(format!("{ROOT}/fixtures"));
    let mut spec = batch_spec(vec![0]);
    spec.tasks = vec!["juggle".into()];
    assert!(run_batch(&spec, &tabletop(), &store, &AnalyticGrasps(Default::default()), false).is_err());
}

#[test]
fn batch_totals_match_telemetry() {
    let store = FixtureStore::new(format!("{ROOT}/fixtures"));
    let mut spec = batch_spec(vec![0, 1]);
    spec.methods = Method::ALL.to_vec();
    spec.tasks = vec![];
    let result = run_batch(&spec, &tabletop(), &store, &AnalyticGrasps(Default::default()), true).unwrap();
    assert!(result.all_ran());
    assert_eq!(result.rows.len(), 3 * 3 * 2);
    let mut inputs = 0;
    let mut length = 0.0;
    for row in &result.rows {
        let t = row.telemetry.as_ref().unwrap();
        let rep = row.report.as_ref().unwrap();
        assert_eq!(t.input_count(), rep.inputs);
        assert_eq!(t.trajectory_length(), rep.trajectory_length);
        assert_eq!(t.ticks.len() as u64, rep.ticks);
        inputs += t.input_count();
        length += t.trajectory_length();
    }
    let means = result.means();
    let mean_inputs: f64 = means.values().map(|m| m.inputs * m.episodes as f64).sum();
    let mean_length: f64 = means.values().map(|m| m.trajectory_length * m.episodes as f64).sum();
    assert!((mean_inputs - inputs as f64).abs() < 1e-9);
    assert!((mean_length - length).abs() < 1e-9);
}
