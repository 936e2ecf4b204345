use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, Notify};
use tokio::time::MissedTickBehavior;

use tasc_core::control::{AssistParams, ControllerConfig, Method, UserFrame};
use tasc_core::inference::CostParams;
use tasc_core::perception::{AdapterError, AdapterMode, Adapters};
use tasc_core::protocol::{tick_events, EventKind, StateFrame, WireMessage};
use tasc_core::sim::{EpisodeConfig, EpisodeReport, EpisodeRunner, EpisodeSetup, ScenarioSpec, SimError};
use tasc_core::telemetry::Telemetry;

pub const MIN_TICK_RATE: f64 = 5.0;
pub const MAX_TICK_RATE: f64 = 60.0;
/// Messages a client may fall behind before it is disconnected.
pub const BROADCAST_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Server-driven fixed-rate ticks; inputs are sampled last-writer-wins.
    #[default]
    Realtime,
    /// Exactly one tick per received input message, in arrival order.
    Lockstep,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("session {0:?} already exists")]
    Duplicate(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("telemetry: {0}")]
    Io(#[from] std::io::Error),
}

fn default_fixtures() -> PathBuf {
    PathBuf::from("fixtures")
}

fn default_method() -> Method {
    Method::Tasc
}

fn default_reconnect() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub scenario: PathBuf,
    #[serde(default = "default_fixtures")]
    pub fixtures: PathBuf,
    #[serde(default)]
    pub adapter_mode: AdapterMode,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub assist: AssistParams,
    /// Overrides the scenario's tick rate (Hz).
    #[serde(default)]
    pub tick_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Task kind whose success ends the session; any task when absent.
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub clock: Clock,
    /// Seconds a session waits without clients before closing.
    #[serde(default = "default_reconnect")]
    pub reconnect_timeout_s: f64,
}

impl SessionConfig {
    pub fn new(scenario: impl Into<PathBuf>, fixtures: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            fixtures: fixtures.into(),
            adapter_mode: AdapterMode::Fixture,
            method: Method::Tasc,
            cost: CostParams::default(),
            assist: AssistParams::default(),
            tick_rate: None,
            seed: 0,
            task: None,
            session_id: None,
            clock: Clock::Realtime,
            reconnect_timeout_s: default_reconnect(),
        }
    }

    /// Loads the scenario and checks every field.
    pub fn episode_config(&self) -> Result<EpisodeConfig, SessionError> {
        if !self.scenario.is_file() {
            return Err(SessionError::Config(format!("scenario file {} does not exist", self.scenario.display())));
        }
        let mut scenario = ScenarioSpec::from_path(&self.scenario)?;
        if let Some(rate) = self.tick_rate {
            scenario.tick_rate = rate;
        }
        if !(MIN_TICK_RATE..=MAX_TICK_RATE).contains(&scenario.tick_rate) {
            return Err(SessionError::Config(format!(
                "tick rate {} Hz outside [{MIN_TICK_RATE}, {MAX_TICK_RATE}]",
                scenario.tick_rate
            )));
        }
        if !(self.reconnect_timeout_s.is_finite() && self.reconnect_timeout_s >= 0.0) {
            return Err(SessionError::Config("reconnect_timeout_s must be a non-negative number".into()));
        }
        if let Some(id) = &self.session_id {
            check_id(id)?;
        }
        let controller = ControllerConfig { method: self.method, cost: self.cost, assist: self.assist };
        controller.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        let config = EpisodeConfig { scenario, seed: self.seed, task: self.task.clone(), controller, user: None };
        config.task_spec()?;
        Ok(config)
    }
}

fn check_id(id: &str) -> Result<(), SessionError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(SessionError::Config(format!("session id {id:?} must be 1-64 characters of [A-Za-z0-9_-]")))
    }
}

/// Single-slot input buffer: a new frame replaces any unread one.
#[derive(Debug, Default)]
pub struct Mailbox(Mutex<Option<UserFrame>>);

impl Mailbox {
    /// Returns true when an unread frame was overwritten.
    pub fn deposit(&self, frame: UserFrame) -> bool {
        self.0.lock().expect("mailbox lock").replace(frame).is_some()
    }

    pub fn take(&self) -> Option<UserFrame> {
        self.0.lock().expect("mailbox lock").take()
    }
}

#[derive(Debug, Clone)]
pub enum Outbound {
    Line(Arc<str>),
    Close,
}

#[derive(Debug, Default)]
struct TickStats {
    total: Duration,
    max: Duration,
    late: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub scenario: String,
    pub method: Method,
    pub task: Option<String>,
    pub clock: Clock,
    pub tick_rate: f64,
    pub grasp_goals: Vec<String>,
    pub telemetry: PathBuf,
    pub ticks: u64,
    pub clients: usize,
    pub finished: bool,
    pub report: Option<EpisodeReport>,
    pub mean_tick_ms: f64,
    pub max_tick_ms: f64,
    /// Realtime ticks whose work took longer than one period.
    pub late_ticks: u64,
}

/// A live session shared between its tick loop and its socket handlers.
pub struct Session {
    id: String,
    scenario: String,
    method: Method,
    task: Option<String>,
    clock: Clock,
    tick_rate: f64,
    reconnect_timeout: Duration,
    grasp_goals: Vec<String>,
    telemetry_path: PathBuf,
    mailbox: Mailbox,
    lockstep: mpsc::UnboundedSender<UserFrame>,
    frames: broadcast::Sender<Outbound>,
    latest: Mutex<Arc<str>>,
    clients: AtomicUsize,
    wake: Notify,
    stop: AtomicBool,
    ticks: AtomicU64,
    stats: Mutex<TickStats>,
    report: Mutex<Option<EpisodeReport>>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn tick(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst)
    }

    pub fn is_finished(&self) -> bool {
        self.report.lock().expect("report lock").is_some()
    }

    /// Hands an operator frame to the tick loop.
    pub fn submit(&self, frame: UserFrame) {
        match self.clock {
            Clock::Realtime => {
                self.mailbox.deposit(frame);
            }
            Clock::Lockstep => {
                let _ = self.lockstep.send(frame);
            }
        }
    }

    /// Registers a client: the latest state line plus every later message.
    pub fn attach_client(&self) -> (Arc<str>, broadcast::Receiver<Outbound>) {
        let latest = self.latest.lock().expect("latest lock");
        let rx = self.frames.subscribe();
        self.clients.fetch_add(1, Ordering::SeqCst);
        self.wake.notify_waiters();
        (latest.clone(), rx)
    }

    pub fn detach_client(&self) {
        self.clients.fetch_sub(1, Ordering::SeqCst);
        self.wake.notify_waiters();
    }

    /// Asks the tick loop to end the session.
    pub fn close(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.wake.notify_waiters();
    }

    pub fn info(&self) -> SessionInfo {
        let stats = self.stats.lock().expect("stats lock");
        let ticks = self.tick();
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        SessionInfo {
            session_id: self.id.clone(),
            scenario: self.scenario.clone(),
            method: self.method,
            task: self.task.clone(),
            clock: self.clock,
            tick_rate: self.tick_rate,
            grasp_goals: self.grasp_goals.clone(),
            telemetry: self.telemetry_path.clone(),
            ticks,
            clients: self.clients.load(Ordering::SeqCst),
            finished: self.is_finished(),
            report: self.report.lock().expect("report lock").clone(),
            mean_tick_ms: if ticks == 0 { 0.0 } else { ms(stats.total) / ticks as f64 },
            max_tick_ms: ms(stats.max),
            late_ticks: stats.late,
        }
    }

    fn stopping(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Waits until a client is connected. False on timeout or close.
    async fn wait_for_client(&self) -> bool {
        let deadline = tokio::time::Instant::now() + self.reconnect_timeout;
        loop {
            let notified = self.wake.notified();
            if self.stopping() {
                return false;
            }
            if self.clients.load(Ordering::SeqCst) > 0 {
                return true;
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return false;
            }
        }
    }

    async fn next_lockstep(&self, inputs: &mut mpsc::UnboundedReceiver<UserFrame>) -> Option<UserFrame> {
        loop {
            let notified = self.wake.notified();
            if self.stopping() {
                return None;
            }
            let idle = self.clients.load(Ordering::SeqCst) == 0;
            tokio::select! {
                biased;
                frame = inputs.recv() => return frame,
                _ = notified => {}
                _ = tokio::time::sleep(self.reconnect_timeout), if idle => return None,
            }
        }
    }

    fn publish(&self, line: String) {
        let mut latest = self.latest.lock().expect("latest lock");
        *latest = Arc::from(line);
        let _ = self.frames.send(Outbound::Line(latest.clone()));
    }

    fn announce(&self, message: &WireMessage) {
        let _ = self.frames.send(Outbound::Line(Arc::from(message.to_line())));
    }

    async fn run(self: Arc<Self>, mut runner: EpisodeRunner, mut inputs: mpsc::UnboundedReceiver<UserFrame>, mut log: TelemetryLog) {
        let period = Duration::from_secs_f64(1.0 / self.tick_rate);
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let mut paused = true;
        while !runner.is_finished() {
            let frame = match self.clock {
                Clock::Realtime => {
                    if self.clients.load(Ordering::SeqCst) == 0 {
                        paused = true;
                    }
                    if paused {
                        if !self.wait_for_client().await {
                            break;
                        }
                        paused = false;
                        interval.reset_immediately();
                    }
                    interval.tick().await;
                    if self.stopping() {
                        break;
                    }
                    // A disconnected session ticks with zero input until it pauses.
                    self.mailbox.take().unwrap_or_default()
                }
                Clock::Lockstep => match self.next_lockstep(&mut inputs).await {
                    Some(frame) => frame,
                    None => break,
                },
            };
            let started = Instant::now();
            if let Err(e) = runner.step(frame, None) {
                runner.abort(format!("tick failed: {e}"));
                break;
            }
            if let Some(rec) = runner.records().last() {
                log.tick(&Telemetry::tick_line(rec));
            }
            self.publish(WireMessage::State(Box::new(StateFrame::capture(&runner))).to_line());
            for event in tick_events(&runner) {
                self.announce(&event);
            }
            self.ticks.store(runner.state().tick, Ordering::SeqCst);
            let took = started.elapsed();
            let mut stats = self.stats.lock().expect("stats lock");
            stats.total += took;
            stats.max = stats.max.max(took);
            if self.clock == Clock::Realtime && took > period {
                stats.late += 1;
            }
        }

        if self.stopping() {
            runner.abort("session closed");
        } else if self.clients.load(Ordering::SeqCst) == 0 {
            runner.abort("no client reconnected within the timeout");
        }
        let report = runner.report();
        log.tick(&Telemetry::summary_line(&report));
        log.flush();
        if !report.success {
            self.announce(&WireMessage::Event {
                event: EventKind::Error,
                detail: report.reason.clone().unwrap_or_else(|| "episode failed".into()),
                tick: report.ticks,
            });
        }
        log::info!("session {} finished after {} ticks: success={}", self.id, report.ticks, report.success);
        *self.report.lock().expect("report lock") = Some(report);
        let _ = self.frames.send(Outbound::Close);
    }
}

/// Append-only JSONL writer that flushes every line.
struct TelemetryLog {
    path: PathBuf,
    out: Option<BufWriter<File>>,
}

impl TelemetryLog {
    fn create(path: &Path, setup: &EpisodeSetup) -> Result<Self, SessionError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", Telemetry::header_line(setup))?;
        out.flush()?;
        Ok(Self { path: path.to_path_buf(), out: Some(out) })
    }

    fn tick(&mut self, line: &str) {
        let Some(out) = self.out.as_mut() else { return };
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            log::error!("telemetry {}: {e}; logging stopped", self.path.display());
            self.out = None;
        }
    }

    fn flush(&mut self) {
        if let Some(out) = self.out.as_mut() {
            let _ = out.flush();
        }
    }
}

/// Every session the service has opened.
pub struct Registry {
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    telemetry_dir: PathBuf,
    counter: AtomicU64,
}

impl Registry {
    pub fn new(telemetry_dir: impl Into<PathBuf>) -> Self {
        Self { sessions: Mutex::new(BTreeMap::new()), telemetry_dir: telemetry_dir.into(), counter: AtomicU64::new(1) }
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        let sessions: Vec<_> = self.sessions.lock().expect("registry lock").values().cloned().collect();
        sessions.iter().map(|s| s.info()).collect()
    }

    fn fresh_id(&self) -> String {
        loop {
            let id = format!("s{:04}", self.counter.fetch_add(1, Ordering::SeqCst));
            if self.get(&id).is_none() {
                return id;
            }
        }
    }

    /// Loads the world, queries the adapters and starts the tick loop.
    /// Must be called inside a Tokio runtime.
    pub async fn open(&self, config: SessionConfig) -> Result<SessionInfo, SessionError> {
        let id = match &config.session_id {
            Some(id) => id.clone(),
            None => self.fresh_id(),
        };
        if self.get(&id).is_some() {
            return Err(SessionError::Duplicate(id));
        }
        let prepared = tokio::task::spawn_blocking(move || -> Result<_, SessionError> {
            let episode = config.episode_config()?;
            let adapters = Adapters::new(config.adapter_mode, &config.fixtures)?;
            let setup = EpisodeSetup::prepare(episode, adapters.vlm.as_ref(), adapters.planner.as_ref())?;
            let runner = EpisodeRunner::new(setup)?;
            Ok((config, runner))
        })
        .await
        .map_err(|e| SessionError::Config(format!("session setup panicked: {e}")))?;
        let (config, runner) = prepared?;

        std::fs::create_dir_all(&self.telemetry_dir)?;
        let telemetry_path = self.telemetry_dir.join(format!("{id}.jsonl"));
        let graph = runner.controller().graph();
        let grasp_goals = runner
            .controller()
            .grasp_goals()
            .into_iter()
            .filter_map(|g| graph.node(g).map(|n| n.name.clone()))
            .collect();
        let (lockstep, inputs) = mpsc::unbounded_channel();
        let (frames, _) = broadcast::channel(BROADCAST_CAPACITY);
        let initial = WireMessage::State(Box::new(StateFrame::capture(&runner))).to_line();
        let cfg = &runner.setup().config;
        let session = Arc::new(Session {
            id: id.clone(),
            scenario: cfg.scenario.name.clone(),
            method: cfg.controller.method,
            task: cfg.task.clone(),
            clock: config.clock,
            tick_rate: cfg.scenario.tick_rate,
            reconnect_timeout: Duration::from_secs_f64(config.reconnect_timeout_s),
            grasp_goals,
            telemetry_path: telemetry_path.clone(),
            mailbox: Mailbox::default(),
            lockstep,
            frames,
            latest: Mutex::new(Arc::from(initial)),
            clients: AtomicUsize::new(0),
            wake: Notify::new(),
            stop: AtomicBool::new(false),
            ticks: AtomicU64::new(0),
            stats: Mutex::new(TickStats::default()),
            report: Mutex::new(None),
        });
        {
            let mut sessions = self.sessions.lock().expect("registry lock");
            if sessions.contains_key(&id) {
                return Err(SessionError::Duplicate(id));
            }
            sessions.insert(id.clone(), session.clone());
        }
        let log = match TelemetryLog::create(&telemetry_path, runner.setup()) {
            Ok(log) => log,
            Err(e) => {
                self.sessions.lock().expect("registry lock").remove(&id);
                return Err(e);
            }
        };
        let info = session.info();
        tokio::spawn(session.run(runner, inputs, log));
        log::info!("session {id} opened ({:?} clock, {} Hz)", info.clock, info.tick_rate);
        Ok(info)
    }
}
