//! Headless episode batches and their metrics table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{AssistParams, ControllerConfig, Method};
use crate::inference::CostParams;
use crate::perception::{AdapterMode, GraspPlanner, VlmAdapter};
use crate::sim::{run_episode, EpisodeConfig, EpisodeReport, ScenarioSpec, SimError, UserSpec};
use crate::telemetry::Telemetry;

fn default_fixtures() -> PathBuf {
    PathBuf::from("fixtures")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    /// Scenario file; relative paths resolve against the spec's directory.
    pub scenario: PathBuf,
    #[serde(default = "default_fixtures")]
    pub fixtures: PathBuf,
    #[serde(default)]
    pub adapter_mode: AdapterMode,
    pub user: UserSpec,
    pub methods: Vec<Method>,
    /// Task kinds to run; empty means every declared task.
    #[serde(default)]
    pub tasks: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub assist: AssistParams,
    /// Parallel episode cap; defaults to the number of CPUs.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl BatchSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let mut spec: BatchSpec = serde_json::from_str(&text)
            .map_err(|e| SimError::Spec(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.scenario = base.join(&spec.scenario);
        spec.fixtures = base.join(&spec.fixtures);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.methods.is_empty() {
            return Err(SimError::Spec("batch needs at least one method".into()));
        }
        if self.seeds.is_empty() {
            return Err(SimError::Spec("batch needs at least one seed".into()));
        }
        if self.workers == Some(0) {
            return Err(SimError::Spec("workers must be at least 1".into()));
        }
        ControllerConfig { method: Method::Tasc, cost: self.cost, assist: self.assist }.validate()?;
        Ok(())
    }

    fn task_kinds(&self, scenario: &ScenarioSpec) -> Result<Vec<String>, SimError> {
        if self.tasks.is_empty() {
            return Ok(scenario.tasks.iter().map(|t| t.kind().to_string()).collect());
        }
        for t in &self.tasks {
            if scenario.task(t).is_none() {
                return Err(SimError::Spec(format!("scenario {} declares no {t:?} task", scenario.name)));
            }
        }
        Ok(self.tasks.clone())
    }
}

/// One episode's outcome; an episode that could not run has `report: None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub report: Option<EpisodeReport>,
    pub error: Option<String>,
    /// Kept only when the batch was asked to.
    pub telemetry: Option<Telemetry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchMean {
    pub episodes: usize,
    pub success_rate: f64,
    pub time_s: f64,
    pub trajectory_length: f64,
    pub inputs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Sorted by task, method, seed.
    pub rows: Vec<BatchRow>,
}

/// Runs every (task, method, seed) combination. Episode errors become rows.
pub fn run_batch(
    spec: &BatchSpec,
    scenario: &ScenarioSpec,
    vlm: &dyn VlmAdapter,
    planner: &dyn GraspPlanner,
    keep_telemetry: bool,
) -> Result<BatchResult, SimError> {
    spec.validate()?;
    scenario.validate()?;
    let tasks = spec.task_kinds(scenario)?;
    let mut jobs = Vec::new();
    for task in &tasks {
        for &method in &spec.methods {
            for &seed in &spec.seeds {
                jobs.push((task.clone(), method, seed));
            }
        }
    }
    jobs.sort();
    jobs.dedup();
    let work = |(task, method, seed): (String, Method, u64)| {
        let config = EpisodeConfig {
            scenario: scenario.clone(),
            seed,
            task: Some(task.clone()),
            controller: ControllerConfig { method, cost: spec.cost, assist: spec.assist },
            user: Some(spec.user.clone()),
        };
        match run_episode(config, vlm, planner) {
            Ok(ep) => BatchRow {
                task,
                method,
                seed,
                report: Some(ep.report),
                error: None,
                telemetry: keep_telemetry.then_some(ep.telemetry),
            },
            Err(e) => BatchRow { task, method, seed, report: None, error: Some(e.to_string()), telemetry: None },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.unwrap_or(0))
        .build()
        .map_err(|e| SimError::Spec(format!("worker pool: {e}")))?;
    let rows = pool.install(|| jobs.into_par_iter().map(work).collect());
    Ok(BatchResult { rows })
}

impl BatchResult {
    pub fn all_ran(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_none())
    }

    /// Means per (task, method) over the episodes that ran.
    pub fn means(&self) -> BTreeMap<(String, Method), BatchMean> {
        let mut groups: BTreeMap<(String, Method), Vec<&EpisodeReport>> = BTreeMap::new();
        for r in &self.rows {
            let entry = groups.entry((r.task.clone(), r.method)).or_default();
            if let Some(rep) = &r.report {
                entry.push(rep);
            }
        }
        groups
            .into_iter()
            .map(|(k, reps)| {
                let n = reps.len();
                let mean = |f: &dyn Fn(&EpisodeReport) -> f64| {
                    if n == 0 {
                        f64::NAN
                    } else {
                        reps.iter().map(|r| f(r)).sum::<f64>() / n as f64
                    }
                };
                let m = BatchMean {
                    episodes: n,
                    success_rate: mean(&|r| f64::from(u8::from(r.success))),
                    time_s: mean(&|r| r.time_s),
                    trajectory_length: mean(&|r| r.trajectory_length),
                    inputs: mean(&|r| r.inputs as f64),
                };
                (k, m)
            })
            .collect()
    }

    /// Metrics table: one row per episode, then one `mean` row per (task, method).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["task", "method", "seed", "success", "time_s", "trajectory_length_m", "inputs", "ticks", "reason"];
        w.write_record(header).expect("in-memory write");
        for r in &self.rows {
            let seed = r.seed.to_string();
            let rec: Vec<String> = match &r.report {
                Some(rep) => vec![
                    r.task.clone(),
                    r.method.to_string(),
                    seed,
                    rep.success.to_string(),
                    rep.time_s.to_string(),
                    rep.trajectory_length.to_string(),
                    rep.inputs.to_string(),
                    rep.ticks.to_string(),
                    rep.reason.clone().unwrap_or_default(),
                ],
                None => vec![
                    r.task.clone(),
                    r.method.to_string(),
                    seed,
                    "false".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("error: {}", r.error.as_deref().unwrap_or("unknown")),
                ],
            };
            w.write_record(&rec).expect("in-memory write");
        }
        for ((task, method), m) in self.means() {
            w.write_record([
                task,
                method.to_string(),
                "mean".into(),
                m.success_rate.to_string(),
                m.time_s.to_string(),
                m.trajectory_length.to_string(),
                m.inputs.to_string(),
                String::new(),
                format!("{} episodes", m.episodes),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}
