//! Acceptance criteria for the engine. Prints one PASS/FAIL line per
//! criterion; exits non-zero on any failure not listed in KNOWN_FAILURES.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio_tungstenite::tungstenite::Message;
use twofloat::TwoFloat;

use tasc_core::control::{ControllerConfig, GripperAction, Method, StageKind, UserFrame};
use tasc_core::geometry::{angle_between, solve_alignment, AlignmentConstraint, Axis, Sign};
use tasc_core::graph::NodeId;
use tasc_core::inference::{reset_belief, update_belief, BeliefStage, CostParams, GoalBelief, InputSample, PROBABILITY_FLOOR};
use tasc_core::perception::{AdapterMode, Adapters};
use tasc_core::protocol::WireMessage;
use tasc_core::sim::{
    load_scenario, run_setup, Episode, EpisodeConfig, EpisodeRunner, EpisodeSetup, ScenarioSpec, ScriptedUser, UserSpec,
};
use tasc_core::telemetry::{approach_convergence, replay, Telemetry};
use tasc_service::{Clock, Registry, SessionConfig};

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

/// Criteria expected to fail, with the reason recorded in the decisions ledger.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "ablation-direction",
    "Insert: the marker->mug approach is unambiguous in the tabletop scene, so tasc-minus \
     and tasc pick the same goals and produce identical episodes (README, Results)",
)];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

struct Env {
    scenario: ScenarioSpec,
    adapters: Adapters,
    setups: BTreeMap<(String, Method, u64), EpisodeSetup>,
}

impl Env {
    fn new() -> Self {
        let scenario = ScenarioSpec::from_path(format!("{ROOT}/scenarios/tabletop.json")).expect("tabletop scenario");
        let adapters = Adapters::new(AdapterMode::Fixture, format!("{ROOT}/fixtures")).expect("fixtures");
        Self { scenario, adapters, setups: BTreeMap::new() }
    }

    fn config(&self, task: &str, method: Method, seed: u64) -> EpisodeConfig {
        EpisodeConfig::new(self.scenario.clone(), seed, task, method, UserSpec::straight(0.002))
    }

    fn setup(&mut self, task: &str, method: Method, seed: u64) -> EpisodeSetup {
        let key = (task.to_string(), method, seed);
        if !self.setups.contains_key(&key) {
            let cfg = self.config(task, method, seed);
            let setup = EpisodeSetup::prepare(cfg, self.adapters.vlm.as_ref(), self.adapters.planner.as_ref()).expect("setup");
            self.setups.insert(key.clone(), setup);
        }
        self.setups[&key].clone()
    }

    fn run(&mut self, task: &str, method: Method, seed: u64) -> Episode {
        run_setup(self.setup(task, method, seed)).expect("episode runs")
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    // Uniform on SO(3) via a normalized 4D Gaussian.
    let g = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    };
    let q = Quaternion::new(g(rng), g(rng), g(rng), g(rng));
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

fn so3_solver_recovery() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5013);
    let axes = [Axis::X, Axis::Y, Axis::Z];
    let mut worst_two = 0.0f64;
    let mut worst_one = 0.0f64;
    for _ in 0..1000 {
        let truth = random_rotation(&mut rng);
        let a = random_rotation(&mut rng);
        // Two distinct source axes mapped to two distinct target slots with random signs.
        let i1 = rng.random_range(0..3);
        let i2 = (i1 + rng.random_range(1..3)) % 3;
        let j1 = rng.random_range(0..3);
        let j2 = (j1 + rng.random_range(1..3)) % 3;
        let s1 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let s2 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut b = Matrix3::zeros();
        let c1 = truth * a.matrix().column(i1) * s1;
        let c2 = truth * a.matrix().column(i2) * s2;
        b.set_column(j1, &c1);
        b.set_column(j2, &c2);
        b.set_column(3 - j1 - j2, &c1.cross(&c2));
        let sign = |s: f64| if s > 0.0 { Sign::Aligned } else { Sign::AntiAligned };
        let cs = [
            AlignmentConstraint::new(axes[i1], axes[j1], sign(s1)),
            AlignmentConstraint::new(axes[i2], axes[j2], sign(s2)),
        ];
        let r = solve_alignment(&cs, a.matrix(), &b).expect("two constraints");
        worst_two = worst_two.max(r.angle_to(&truth));

        let k1 = [cs[0]];
        let r1 = solve_alignment(&k1, a.matrix(), &b).expect("one constraint");
        let target = b.column(j1) * s1;
        let vector_angle = a.matrix().column(i1).angle(&target);
        worst_one = worst_one.max((r1.angle() - vector_angle).abs());
    }
    let anti = solve_alignment(
        &[AlignmentConstraint::new(Axis::X, Axis::X, Sign::AntiAligned)],
        &Matrix3::identity(),
        &Matrix3::identity(),
    )
    .expect("antipodal");
    let canonical = Rotation3::from_axis_angle(&Vector3::z_axis(), PI);
    let antipodal_err = anti.angle_to(&canonical);
    let elapsed = started.elapsed();
    Outcome {
        id: "so3-solver-recovery",
        pass: worst_two < 1e-6 && worst_one < 1e-9 && antipodal_err < 1e-12 && elapsed < Duration::from_secs(5),
        detail: format!(
            "1000 rotations: worst geodesic error {worst_two:.2e} rad (< 1e-6), k=1 worst angle gap {worst_one:.2e} (< 1e-9), \
             antipodal vs half-turn about +Z {antipodal_err:.1e}, {:.2} s (< 5 s)",
            elapsed.as_secs_f64()
        ),
    }
}

/// The goal posterior accumulated in double-double arithmetic, including the documented
/// probability floor, kept independent of the library code.
struct BayesOracle {
    log_w: Vec<TwoFloat>,
    params: CostParams,
}

fn oracle_cost(p: &CostParams, d: TwoFloat) -> TwoFloat {
    if d <= TwoFloat::from(p.delta) {
        TwoFloat::from(p.c0) / TwoFloat::from(p.delta) * d
    } else {
        TwoFloat::from(p.c0)
    }
}

fn oracle_value(p: &CostParams, d: TwoFloat) -> TwoFloat {
    oracle_cost(p, d) * (TwoFloat::from(p.k) * d + TwoFloat::from(p.b))
}

impl BayesOracle {
    fn dist(a: [TwoFloat; 3], g: &Vector3<f64>) -> TwoFloat {
        let mut s = TwoFloat::from(0.0);
        for i in 0..3 {
            let d = a[i] - TwoFloat::from(g[i]);
            s += d * d;
        }
        s.sqrt()
    }

    fn step(&mut self, x: &Vector3<f64>, u: &Vector3<f64>, goals: &[Vector3<f64>]) -> Vec<f64> {
        let xt = [TwoFloat::from(x.x), TwoFloat::from(x.y), TwoFloat::from(x.z)];
        let xn = [xt[0] + TwoFloat::from(u.x), xt[1] + TwoFloat::from(u.y), xt[2] + TwoFloat::from(u.z)];
        let p = self.params;
        for (w, g) in self.log_w.iter_mut().zip(goals) {
            let d = Self::dist(xt, g);
            let dn = Self::dist(xn, g);
            *w += TwoFloat::from(p.eta) * (oracle_value(&p, d) - oracle_cost(&p, d) - oracle_value(&p, dn));
        }
        let mut p = self.normalized();
        let floor = TwoFloat::from(PROBABILITY_FLOOR);
        if p.iter().any(|v| *v < floor) {
            for v in p.iter_mut() {
                if *v < floor {
                    *v = floor;
                }
            }
            let total: TwoFloat = p.iter().fold(TwoFloat::from(0.0), |a, b| a + *b);
            p.iter_mut().for_each(|v| *v /= total);
        }
        self.log_w = p.iter().map(|v| v.ln()).collect();
        p.iter().map(|v| v.hi() + v.lo()).collect()
    }

    fn normalized(&self) -> Vec<TwoFloat> {
        let max = self.log_w.iter().copied().fold(self.log_w[0], |a, b| if b > a { b } else { a });
        let e: Vec<TwoFloat> = self.log_w.iter().map(|w| (*w - max).exp()).collect();
        let total = e.iter().fold(TwoFloat::from(0.0), |a, b| a + *b);
        e.into_iter().map(|v| v / total).collect()
    }
}

fn bayes_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBA7E5);
    let params = CostParams::default();
    let mut worst = 0.0f64;
    let mut floored_steps = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let goals: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.0..0.4)))
            .collect();
        let ids: Vec<NodeId> = (0..n as u32).map(NodeId).collect();
        let positions: BTreeMap<NodeId, Vector3<f64>> = ids.iter().copied().zip(goals.iter().copied()).collect();
        let mut belief: GoalBelief = reset_belief(&ids, BeliefStage::Grasping).expect("non-empty");
        let mut oracle = BayesOracle { log_w: vec![TwoFloat::from(-(n as f64).ln()); n], params };
        let mut x = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(0.05..0.4));
        for t in 0..50 {
            let u = Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
            belief = update_belief(&belief, &InputSample::new(x, u, t), &positions, &params).expect("update");
            let expected = oracle.step(&x, &u, &goals);
            if expected.iter().any(|p| *p <= PROBABILITY_FLOOR * (1.0 + 1e-9)) {
                floored_steps += 1;
            }
            let tv: f64 = ids
                .iter()
                .zip(&expected)
                .map(|(id, e)| (belief.probability(*id).expect("goal present") - e).abs())
                .sum::<f64>()
                / 2.0;
            worst = worst.max(tv);
            x += u;
        }
    }
    Outcome {
        id: "bayes-oracle-equivalence",
        pass: worst < 1e-9,
        detail: format!("100 scenes x 50 steps: worst per-step TV distance {worst:.2e} (< 1e-9); {floored_steps} steps hit the floor"),
    }
}

fn convergence(env: &mut Env) -> Outcome {
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for task in ["place", "insert", "hammer"] {
        let (mut grasp, mut interact) = (0, 0);
        for seed in 0..100 {
            let ep = env.run(task, Method::Tasc, seed);
            let c = approach_convergence(&ep.telemetry);
            grasp += usize::from(c.grasping == Some(1.0));
            interact += usize::from(c.interaction == Some(1.0));
        }
        pass &= grasp >= 90 && interact >= 90;
        parts.push(format!("{task} {grasp}/100 grasp, {interact}/100 interaction"));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    Outcome {
        id: "convergence",
        pass,
        detail: format!("argmax = true goal over final half of approach: {} (>= 90 each), {:.1} s", parts.join("; "), elapsed.as_secs_f64()),
    }
}

fn end_to_end_success(env: &mut Env) -> Outcome {
    let started = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for task in ["place", "insert", "hammer"] {
        let ok = (0..10).filter(|&s| env.run(task, Method::Tasc, s).report.success).count();
        pass &= ok >= 9;
        parts.push(format!("tasc {task} {ok}/10"));
    }
    for task in ["insert", "hammer"] {
        let spec = env.scenario.task(task).expect("declared").clone();
        let tol = spec.tolerance().expect("oriented task");
        let mut failed = 0;
        let mut misaligned = 0;
        for seed in 0..10 {
            let (scene, state) = load_scenario(&env.scenario, seed).expect("scene");
            let initial = spec.orientation_error(&scene, &state).expect("oriented task");
            misaligned += usize::from(initial > tol);
            failed += usize::from(!env.run(task, Method::Teleop, seed).report.success);
        }
        pass &= failed == 10 && misaligned == 10;
        parts.push(format!("teleop {task} fails {failed}/10 (initial error > tolerance in {misaligned}/10)"));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    Outcome { id: "end-to-end-success", pass, detail: format!("{}, {:.1} s", parts.join("; "), elapsed.as_secs_f64()) }
}

fn ablation_direction(env: &mut Env) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for task in ["insert", "hammer"] {
        let mean = |env: &mut Env, m: Method| {
            let eps: Vec<_> = (0..10).map(|s| env.run(task, m, s).report).collect();
            let n = eps.len() as f64;
            (eps.iter().map(|r| r.inputs as f64).sum::<f64>() / n, eps.iter().map(|r| r.trajectory_length).sum::<f64>() / n)
        };
        let (full_in, full_len) = mean(env, Method::Tasc);
        let (minus_in, minus_len) = mean(env, Method::TascMinus);
        let ok = full_in < minus_in && full_len < minus_len;
        pass &= ok;
        parts.push(format!(
            "{task}: inputs {full_in:.1} vs {minus_in:.1}, length {full_len:.4} vs {minus_len:.4} m{}",
            if ok { "" } else { " (not strictly lower)" }
        ));
    }
    Outcome { id: "ablation-direction", pass, detail: format!("tasc vs tasc-minus means over 10 seeds: {}", parts.join("; ")) }
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

/// Next state frame's tick and hash; `None` once the server closes.
async fn next_state(ws: &mut Ws) -> Result<Option<(u64, String)>, String> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next()).await.map_err(|_| "timeout".to_string())?;
        match msg {
            Some(Ok(Message::Text(t))) => {
                if let WireMessage::State(f) = WireMessage::parse(t.as_str())? {
                    return Ok(Some((f.tick, f.state_hash)));
                }
            }
            Some(Ok(Message::Close(_))) | None => return Ok(None),
            Some(Ok(_)) => {}
            Some(Err(e)) => return Err(e.to_string()),
        }
    }
}

async fn drive_session(port: u16, id: &str, inputs: &[UserFrame]) -> Result<Vec<String>, String> {
    let url = format!("ws://127.0.0.1:{port}/sessions/{id}/ws");
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    next_state(&mut ws).await?;
    for (seq, f) in inputs.iter().enumerate() {
        let m = WireMessage::Input { u_h: f.u_h.into(), gripper: f.gripper, seq: seq as u64 };
        ws.send(Message::Text(m.to_line().into())).await.map_err(|e| e.to_string())?;
        match next_state(&mut ws).await? {
            Some((tick, hash)) if tick == seq as u64 + 1 => hashes.push(hash),
            Some((tick, _)) => return Err(format!("expected tick {}, got {tick}", seq + 1)),
            None => return Err(format!("socket closed before tick {}", seq + 1)),
        }
    }
    Ok(hashes)
}

fn determinism_and_replay(env: &mut Env) -> Outcome {
    let mut replayed = 0;
    let mut mismatched = Vec::new();
    let mut episodes = Vec::new();
    for task in ["place", "insert", "hammer"] {
        for method in Method::ALL {
            for seed in 0..10 {
                let ep = env.run(task, method, seed);
                let text = ep.telemetry.to_jsonl();
                let parsed = Telemetry::from_jsonl(&text).expect("log parses");
                let r = replay(&parsed).expect("replay runs");
                replayed += 1;
                if !(r.matched && r.ticks_checked == ep.report.ticks && r.final_state_hash == ep.report.final_state_hash) {
                    mismatched.push(format!("{task}/{method}/{seed}"));
                }
                if seed == 0 {
                    episodes.push((task, method, ep));
                }
            }
        }
    }

    let dir = tempfile::tempdir().expect("tempdir");
    let runtime = tokio::runtime::Runtime::new().expect("runtime");
    let wire = runtime.block_on(async {
        let registry = Arc::new(Registry::new(dir.path()));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let port = listener.local_addr().map_err(|e| e.to_string())?.port();
        tokio::spawn(tasc_service::serve_on(listener, registry.clone()));
        let mut checked = 0;
        let mut failures = Vec::new();
        for (task, method, ep) in &episodes {
            let id = format!("{task}-{method}");
            let mut c = SessionConfig::new(format!("{ROOT}/scenarios/tabletop.json"), format!("{ROOT}/fixtures"));
            c.method = *method;
            c.task = Some(task.to_string());
            c.seed = 0;
            c.clock = Clock::Lockstep;
            c.session_id = Some(id.clone());
            registry.open(c).await.map_err(|e| e.to_string())?;
            let inputs: Vec<UserFrame> = ep.telemetry.ticks.iter().map(|t| t.input).collect();
            let hashes = drive_session(port, &id, &inputs).await?;
            let expected: Vec<&String> = ep.telemetry.ticks.iter().map(|t| &t.state_hash).collect();
            checked += 1;
            if hashes.iter().collect::<Vec<_>>() != expected {
                failures.push(id);
            }
        }
        Ok::<_, String>((checked, failures))
    });
    let (wire_checked, wire_failures) = match wire {
        Ok(v) => v,
        Err(e) => (0, vec![e]),
    };
    Outcome {
        id: "determinism-and-replay",
        pass: mismatched.is_empty() && wire_failures.is_empty() && wire_checked == 9,
        detail: format!(
            "{replayed} batch episodes replayed from JSONL, {} mismatched; {wire_checked} lockstep wire sessions hash-equal to headless runs, {} differ{}",
            mismatched.len(),
            wire_failures.len(),
            if wire_failures.is_empty() { String::new() } else { format!(": {wire_failures:?}") }
        ),
    }
}

fn legal_kind_step(from: StageKind, to: StageKind, direct: bool) -> bool {
    use StageKind::*;
    matches!(
        (from, to, direct),
        (Grasping, Grasping, _)
            | (Grasping, AutoGrasp, false)
            | (Grasping, Interaction, true)
            | (AutoGrasp, AutoGrasp, false)
            | (AutoGrasp, Interaction, false)
            | (Interaction, Interaction, _)
            | (Interaction, Done, _)
            | (Done, Done, _)
    )
}

fn controller_safety(env: &mut Env) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let omega_max = ControllerConfig::new(Method::Tasc).assist.omega_max;
    let mut ticks = 0u64;
    let mut worst_angle = 0.0f64;
    let mut idle_rotations = 0;
    let mut illegal = Vec::new();
    let mut visited = BTreeMap::new();
    let mut episode = 0u64;
    while ticks < 10_000 {
        let method = Method::ALL[(episode % 3) as usize];
        let task = ["place", "insert", "hammer"][((episode / 3) % 3) as usize];
        let seed = 1000 + episode;
        episode += 1;
        let setup = env.setup(task, method, seed);
        let spec = env.scenario.task(task).expect("declared").clone();
        let mut user = ScriptedUser::new(UserSpec::straight(0.002), spec, seed);
        let mut runner = EpisodeRunner::new(setup).expect("runner");
        let direct = runner.controller().direct_grasp();
        let mut stage = runner.controller().stage().kind();
        while !runner.is_finished() && ticks < 10_000 {
            let scripted = user.step(&runner.observation());
            let roll: f64 = rng.random();
            let frame = if roll < 0.25 {
                UserFrame::idle()
            } else if roll < 0.45 {
                let u = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let gripper = match rng.random_range(0..40) {
                    0 => GripperAction::Close,
                    1 => GripperAction::Open,
                    _ => GripperAction::None,
                };
                UserFrame { u_h: u * rng.random_range(0.0..0.02), gripper }
            } else {
                scripted
            };
            let rec = runner.step(frame, None).expect("tick");
            ticks += 1;
            let u_r = UnitQuaternion::from_quaternion(Quaternion::new(rec.u_r[0], rec.u_r[1], rec.u_r[2], rec.u_r[3]));
            let angle = angle_between(&u_r, &UnitQuaternion::identity());
            worst_angle = worst_angle.max(angle);
            let next = rec.stage.kind();
            if frame.u_h.norm() == 0.0 && stage != StageKind::AutoGrasp && rec.u_r != [1.0, 0.0, 0.0, 0.0] {
                idle_rotations += 1;
            }
            if !legal_kind_step(stage, next, direct) {
                illegal.push(format!("{method} {task} seed {seed}: {stage:?} -> {next:?}"));
            }
            *visited.entry(next).or_insert(0u64) += 1;
            stage = next;
        }
    }
    let all_stages = visited.len() == 4;
    Outcome {
        id: "controller-safety",
        pass: worst_angle <= omega_max + 1e-12 && idle_rotations == 0 && illegal.is_empty() && all_stages,
        detail: format!(
            "{ticks} fuzzed ticks over {episode} episodes: max |u_r| {worst_angle:.4} rad (omega_max {omega_max}), \
             {idle_rotations} rotations on idle input outside AutoGrasp, {} illegal transitions, stages visited {:?}",
            illegal.len(),
            visited
        ),
    }
}

fn main() {
    let started = Instant::now();
    let mut env = Env::new();
    let outcomes = vec![
        so3_solver_recovery(),
        bayes_oracle_equivalence(),
        convergence(&mut env),
        end_to_end_success(&mut env),
        ablation_direction(&mut env),
        determinism_and_replay(&mut env),
        controller_safety(&mut env),
    ];
    let mut unexpected = 0;
    for o in &outcomes {
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == o.id);
        let tag = match (o.pass, known) {
            (true, None) => "PASS",
            (false, Some(_)) => "FAIL (known)",
            (false, None) => {
                unexpected += 1;
                "FAIL"
            }
            (true, Some(_)) => {
                unexpected += 1;
                "PASS (listed as known failure; update KNOWN_FAILURES)"
            }
        };
        println!("{tag} [{}] {}", o.id, o.detail);
        if let (false, Some((_, why))) = (o.pass, known) {
            println!("    known: {why}");
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed in {:.1} s", outcomes.len(), started.elapsed().as_secs_f64());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
