//! Episode telemetry as JSON lines, and replay against it.
//!
//! A log is one `header` line carrying the [`EpisodeSetup`], one `tick`
//! line per tick, and an optional closing `summary` line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::{GripperAction, StageState, UserFrame};
use crate::geometry::Pose;
use crate::sim::{EpisodeReport, EpisodeRunner, EpisodeSetup, SimError, UserPhase, WorldEvent};

pub const TELEMETRY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefEntry {
    pub id: u32,
    pub goal: String,
    pub probability: f64,
}

/// Everything observable about one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    /// World tick the controller saw; the state after the step has `tick + 1`.
    pub tick: u64,
    pub input: UserFrame,
    #[serde(default)]
    pub user_phase: Option<UserPhase>,
    pub stage: StageState,
    /// Applied rotation delta, `[w, x, y, z]`.
    pub u_r: [f64; 4],
    pub translation: Vector3<f64>,
    pub gripper: GripperAction,
    pub belief: Vec<BeliefEntry>,
    pub argmax: Option<String>,
    pub argmax_id: Option<u32>,
    pub assist_target: Option<Pose>,
    pub eef: Pose,
    pub attached: Option<String>,
    pub events: Vec<WorldEvent>,
    pub success: Vec<bool>,
    pub state_hash: String,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header { schema_version: u32, setup: Box<EpisodeSetup> },
    Tick(Box<TickRecord>),
    Summary(Box<EpisodeReport>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub setup: EpisodeSetup,
    pub ticks: Vec<TickRecord>,
    pub summary: Option<EpisodeReport>,
}

fn line_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("telemetry serializes")
}

impl Telemetry {
    pub fn header_line(setup: &EpisodeSetup) -> String {
        line_json(&Line::Header { schema_version: TELEMETRY_SCHEMA_VERSION, setup: Box::new(setup.clone()) })
    }

    pub fn tick_line(record: &TickRecord) -> String {
        line_json(&Line::Tick(Box::new(record.clone())))
    }

    pub fn summary_line(report: &EpisodeReport) -> String {
        line_json(&Line::Summary(Box::new(report.clone())))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Self::header_line(&self.setup);
        out.push('\n');
        for t in &self.ticks {
            out.push_str(&Self::tick_line(t));
            out.push('\n');
        }
        if let Some(s) = &self.summary {
            out.push_str(&Self::summary_line(s));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SimError> {
        let mut setup = None;
        let mut ticks = Vec::new();
        let mut summary = None;
        for (n, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw)
                .map_err(|e| SimError::Spec(format!("telemetry line {}: {e}", n + 1)))?;
            match line {
                Line::Header { schema_version, setup: s } => {
                    if schema_version != TELEMETRY_SCHEMA_VERSION {
                        return Err(SimError::Spec(format!("unsupported telemetry schema_version {schema_version}")));
                    }
                    if setup.replace(*s).is_some() {
                        return Err(SimError::Spec(format!("telemetry line {}: second header", n + 1)));
                    }
                }
                Line::Tick(t) if setup.is_some() => ticks.push(*t),
                Line::Summary(s) if setup.is_some() => summary = Some(*s),
                _ => return Err(SimError::Spec(format!("telemetry line {}: record before header", n + 1))),
            }
        }
        let setup = setup.ok_or_else(|| SimError::Spec("telemetry has no header".into()))?;
        Ok(Self { setup, ticks, summary })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    /// Sum of end-effector displacements recomputed from the log.
    pub fn trajectory_length(&self) -> f64 {
        let mut prev = self.setup.config.scenario.eef_start.position;
        let mut total = 0.0;
        for t in &self.ticks {
            total += (t.eef.position - prev).norm();
            prev = t.eef.position;
        }
        total
    }

    /// Operator input count recomputed from the log.
    pub fn input_count(&self) -> u64 {
        self.ticks
            .iter()
            .map(|t| u64::from(t.input.u_h.norm() > 0.0) + u64::from(t.input.gripper != GripperAction::None))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub tick: u64,
    pub expected: String,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub ticks_checked: u64,
    pub matched: bool,
    pub first_divergence: Option<Divergence>,
    pub final_state_hash: String,
}

/// Re-executes the logged inputs and compares every state hash.
pub fn replay(telemetry: &Telemetry) -> Result<ReplayReport, SimError> {
    let mut runner = EpisodeRunner::new(telemetry.setup.clone())?;
    let mut checked = 0;
    for rec in &telemetry.ticks {
        let actual = if runner.is_finished() {
            None
        } else {
            Some(runner.step(rec.input, rec.user_phase)?.state_hash.clone())
        };
        checked += 1;
        if actual.as_deref() != Some(rec.state_hash.as_str()) {
            return Ok(ReplayReport {
                ticks_checked: checked,
                matched: false,
                first_divergence: Some(Divergence { tick: rec.tick, expected: rec.state_hash.clone(), actual }),
                final_state_hash: runner.state().state_hash(),
            });
        }
    }
    Ok(ReplayReport { ticks_checked: checked, matched: true, first_divergence: None, final_state_hash: runner.state().state_hash() })
}

/// Per-tick goal probabilities in long form:
/// `tick,stage,goal,probability,argmax,true_goal`.
///
/// `true_goal` marks the object the declared task grasps during the grasp
/// stages and the object it acts on afterwards.
pub fn belief_csv(telemetry: &Telemetry) -> String {
    let cfg = &telemetry.setup.config;
    let task = cfg.task_spec().ok().flatten().map(|(_, t)| t);
    let mut out = String::from("tick,stage,goal,probability,argmax,true_goal\n");
    for t in &telemetry.ticks {
        let stage = t.stage.kind();
        let truth = task.map(|task| match stage {
            crate::control::StageKind::Grasping | crate::control::StageKind::AutoGrasp => task.object(),
            _ => task.target(),
        });
        for b in &t.belief {
            let is_argmax = t.argmax_id == Some(b.id);
            let is_true = truth.is_some_and(|n| n.eq_ignore_ascii_case(&b.goal));
            let _ = writeln!(out, "{},{},{},{},{},{}", t.tick, stage.as_str(), b.goal, b.probability, is_argmax, is_true);
        }
    }
    out
}

/// Share of the final half of an approach phase during which the belief
/// argmax named the true goal. `None` when the phase never occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachConvergence {
    /// Reaching for the object to grasp.
    pub grasping: Option<f64>,
    /// Carrying it to the object it acts on.
    pub interaction: Option<f64>,
}

pub fn approach_convergence(telemetry: &Telemetry) -> ApproachConvergence {
    let task = telemetry.setup.config.task_spec().ok().flatten().map(|(_, t)| t);
    let share = |phase: UserPhase, goal: Option<&str>| {
        let ticks: Vec<&TickRecord> = telemetry.ticks.iter().filter(|t| t.user_phase == Some(phase)).collect();
        if ticks.is_empty() {
            return None;
        }
        let tail = &ticks[ticks.len() / 2..];
        let hits = tail
            .iter()
            .filter(|t| matches!((t.argmax.as_deref(), goal), (Some(a), Some(g)) if a.eq_ignore_ascii_case(g)))
            .count();
        Some(hits as f64 / tail.len() as f64)
    };
    ApproachConvergence {
        grasping: share(UserPhase::Reach, task.map(|t| t.object())),
        interaction: share(UserPhase::Transport, task.map(|t| t.target())),
    }
}
