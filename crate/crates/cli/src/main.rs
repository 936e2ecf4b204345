use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tasc_core::batch::{run_batch, BatchSpec};
use tasc_core::perception::{validate_fixtures, AdapterMode, Adapters};
use tasc_core::sim::ScenarioSpec;
use tasc_core::telemetry::{approach_convergence, belief_csv, replay, Telemetry};
use tasc_service::{Registry, SessionConfig};

#[derive(Debug, Parser)]
#[command(name = "tasc", version, about = "Task-aware shared-control teleoperation")]
struct Cli {
    /// JSON config: a batch spec for run-batch, a session config for serve.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured ones.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// fixture or live; overrides the config.
    #[arg(long, global = true)]
    adapter_mode: Option<AdapterMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run headless episodes and write metrics.csv plus per-episode telemetry.
    RunBatch,
    /// Re-execute a telemetry log and check every state hash.
    Replay { telemetry: PathBuf },
    /// Schema-check adapter fixtures.
    ValidateFixtures {
        #[arg(default_value = "fixtures")]
        paths: Vec<PathBuf>,
    },
    /// Start the session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765", env = "TASC_ADDR")]
        addr: SocketAddr,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunBatch => cmd_run_batch(&cli),
        Command::Replay { telemetry } => cmd_replay(telemetry, cli.out.as_deref()),
        Command::ValidateFixtures { paths } => cmd_validate(paths),
        Command::Serve { addr } => cmd_serve(&cli, *addr),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run_batch(cli: &Cli) -> Result<bool> {
    let Some(path) = &cli.config else { bail!("run-batch needs --config <batch.json>") };
    let mut spec = BatchSpec::from_path(path)?;
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    if let Some(mode) = cli.adapter_mode {
        spec.adapter_mode = mode;
    }
    let scenario = ScenarioSpec::from_path(&spec.scenario)?;
    let adapters = Adapters::new(spec.adapter_mode, &spec.fixtures)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let result = run_batch(&spec, &scenario, adapters.vlm.as_ref(), adapters.planner.as_ref(), true)?;

    let logs = out.join("telemetry");
    std::fs::create_dir_all(&logs).with_context(|| format!("creating {}", logs.display()))?;
    for row in &result.rows {
        if let Some(t) = &row.telemetry {
            t.write(logs.join(format!("{}-{}-{}.jsonl", row.task, row.method, row.seed)))?;
        }
        if let Some(e) = &row.error {
            log::error!("{} {} seed {}: {e}", row.task, row.method, row.seed);
        }
    }
    let csv_path = out.join("metrics.csv");
    std::fs::write(&csv_path, result.to_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    for ((task, method), m) in result.means() {
        println!(
            "{task:<8} {method:<10} success {:>5.2}  time {:>7.2} s  length {:>6.3} m  inputs {:>7.1}",
            m.success_rate, m.time_s, m.trajectory_length, m.inputs
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(result.all_ran())
}

fn cmd_replay(path: &Path, out: Option<&Path>) -> Result<bool> {
    let telemetry = Telemetry::read(path)?;
    let report = replay(&telemetry)?;
    let convergence = approach_convergence(&telemetry);
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({"replay": report, "convergence": convergence}))?);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("telemetry");
        let csv = dir.join(format!("{stem}.belief.csv"));
        std::fs::write(&csv, belief_csv(&telemetry))?;
        eprintln!("wrote {}", csv.display());
    }
    if let Some(d) = &report.first_divergence {
        eprintln!("diverged at tick {}: expected {}, got {}", d.tick, d.expected, d.actual.as_deref().unwrap_or("<finished>"));
    }
    Ok(report.matched)
}

fn cmd_validate(paths: &[PathBuf]) -> Result<bool> {
    let reports = validate_fixtures(paths);
    if reports.is_empty() {
        bail!("no fixture files found");
    }
    let mut failed = 0;
    for r in &reports {
        if r.ok() {
            println!("ok    {}", r.path.display());
        } else {
            failed += 1;
            for e in &r.errors {
                println!("FAIL  {}: {e}", r.path.display());
            }
        }
        for w in &r.warnings {
            println!("warn  {}: {w}", r.path.display());
        }
    }
    println!("{} files, {failed} failed", reports.len());
    Ok(failed == 0)
}

fn cmd_serve(cli: &Cli, addr: SocketAddr) -> Result<bool> {
    let telemetry_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/sessions"));
    let initial = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut c: SessionConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(seed) = cli.seed {
                c.seed = seed;
            }
            if let Some(mode) = cli.adapter_mode {
                c.adapter_mode = mode;
            }
            Some(c)
        }
        None => None,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let registry = Arc::new(Registry::new(telemetry_dir));
        if let Some(c) = initial {
            let info = registry.open(c).await?;
            println!("session {} at ws://{addr}/sessions/{}/ws", info.session_id, info.session_id);
        }
        tasc_service::serve(addr, registry).await?;
        Ok(true)
    })
}
