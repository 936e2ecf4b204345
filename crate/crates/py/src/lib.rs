//! Python bindings. Structured results cross the boundary as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tasc_core::control::Method;
use tasc_core::perception::{validate_fixtures, AdapterMode, Adapters};
use tasc_core::sim::{run_episode as run, EpisodeConfig, ScenarioSpec, UserSpec};
use tasc_core::telemetry::{replay, Telemetry};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_json(v: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(v).map_err(runtime_err)
}

/// Runs one headless fixture-mode episode with the straight-line user and
/// returns the episode report as JSON. Writes telemetry when `telemetry` is given.
#[pyfunction]
#[pyo3(signature = (scenario, fixtures, task, method = "tasc", seed = 0, sigma = 0.002, telemetry = None))]
fn run_episode(
    scenario: PathBuf,
    fixtures: PathBuf,
    task: &str,
    method: &str,
    seed: u64,
    sigma: f64,
    telemetry: Option<PathBuf>,
) -> PyResult<String> {
    let method: Method = method.parse().map_err(value_err)?;
    let spec = ScenarioSpec::from_path(&scenario).map_err(value_err)?;
    let adapters = Adapters::new(AdapterMode::Fixture, &fixtures).map_err(runtime_err)?;
    let config = EpisodeConfig::new(spec, seed, task, method, UserSpec::straight(sigma));
    let episode = run(config, adapters.vlm.as_ref(), adapters.planner.as_ref()).map_err(runtime_err)?;
    if let Some(path) = telemetry {
        episode.telemetry.write(path).map_err(runtime_err)?;
    }
    to_json(&episode.report)
}

/// Re-executes a telemetry log; returns the replay report as JSON.
#[pyfunction]
fn replay_telemetry(path: PathBuf) -> PyResult<String> {
    let telemetry = Telemetry::read(path).map_err(value_err)?;
    to_json(&replay(&telemetry).map_err(runtime_err)?)
}

/// Schema-checks fixture files or directories; returns one JSON object per file.
#[pyfunction]
fn check_fixtures(paths: Vec<PathBuf>) -> PyResult<String> {
    let reports: Vec<_> = validate_fixtures(&paths)
        .into_iter()
        .map(|r| {
            serde_json::json!({
                "path": r.path,
                "ok": r.ok(),
                "errors": r.errors,
                "warnings": r.warnings,
            })
        })
        .collect();
    to_json(&reports)
}

#[pyfunction]
fn wire_schema() -> PyResult<String> {
    to_json(&tasc_core::protocol::wire_json_schema())
}

#[pymodule]
fn tasc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(replay_telemetry, m)?)?;
    m.add_function(wrap_pyfunction!(check_fixtures, m)?)?;
    m.add_function(wrap_pyfunction!(wire_schema, m)?)?;
    m.add("PROTOCOL_VERSION", tasc_core::protocol::PROTOCOL_VERSION)?;
    Ok(())
}
