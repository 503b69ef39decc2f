//! Executes a validated scenario's schedule into a run log.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::agent::{build_environment, run_phase, Agent, AgentError, PhaseReport, RunContext};
use crate::design::derive_seed;
use crate::scenario::{PhaseMode, Scenario, ScenarioError};
use crate::telemetry::{EventBuffer, LogSink, TelemetryError, LOG_SCHEMA_VERSION};

/// Stream index of the agent's own generator under the run seed. Episode
/// seeds use indices 0, 1, 2, … so this sits far above any episode count.
const AGENT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Validation(#[from] ScenarioError),
    #[error("simulation aborted: {0}")]
    Simulation(#[from] AgentError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: String,
    pub seed: u64,
    pub phases: Vec<PhaseReport>,
    pub records: u64,
    pub log_path: Option<PathBuf>,
}

/// Run seed: the override if given, else the document's seed.
pub fn effective_seed(scenario: &Scenario, seed_override: Option<u64>) -> u64 {
    seed_override.unwrap_or(scenario.doc.seed)
}

fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Runs every schedule phase, streaming records into `sink`. The sink is left
/// open; callers close or discard it.
pub fn execute(scenario: &Scenario, seed_override: Option<u64>, sink: &mut LogSink) -> Result<Vec<PhaseReport>, RunError> {
    let doc = &scenario.doc;
    let seed = effective_seed(scenario, seed_override);
    let run = doc.run.as_ref();
    sink.emit(
        0.0,
        "run",
        "run.start",
        obj(json!({
            "schema_version": LOG_SCHEMA_VERSION,
            "run_id": doc.run_id(),
            "scenario": doc.name,
            "seed": seed,
            "document_seed": doc.seed,
            "seed_override": seed_override,
            "experiment": run.and_then(|r| r.experiment.clone()),
            "index": run.map(|r| r.index),
            "factors": run.map(|r| json!(r.factors)).unwrap_or_else(|| json!({})),
            "learner": doc.learner_kind(),
            "interval_s": scenario.interval(),
        })),
    )?;

    let events = EventBuffer::new();
    let mut env = build_environment(scenario, &events)?;
    let mut agent = Agent::new(scenario, &env, derive_seed(seed, AGENT_STREAM))?;
    let mut ctx = RunContext {
        run_seed: seed,
        episode_counter: 0,
        time_offset: 0.0,
    };
    let mut reports = Vec::new();
    for phase in &doc.schedule {
        sink.emit(
            ctx.time_offset,
            "run",
            "phase.start",
            obj(json!({
                "phase": phase.name,
                "mode": phase.mode,
                "episodes": phase.episodes,
                "episode_length": phase.episode_length,
            })),
        )?;
        let mut telemetry_err = None;
        let mut flush = |ev: &EventBuffer| {
            if let Err(e) = ev.drain_into(sink) {
                telemetry_err.get_or_insert(e);
            }
            Ok(())
        };
        let result = run_phase(&mut env, &mut agent, phase, &mut ctx, &mut flush);
        if let Some(e) = telemetry_err {
            return Err(e.into());
        }
        let report = result?;
        events.drain_into(sink)?;
        let mut end = json!({
            "phase": phase.name,
            "mode": phase.mode,
            "skipped": report.skipped,
            "episodes_run": report.episodes.len(),
        });
        if !report.episodes.is_empty() {
            end["return_mean"] = json!(report.return_mean);
            end["return_min"] = json!(report.return_min);
            end["return_max"] = json!(report.return_max);
        }
        if phase.mode == PhaseMode::Train {
            if let Some(b) = report.best_return {
                end["best_return"] = json!(b);
            }
        }
        sink.emit(ctx.time_offset, "run", "phase.end", obj(end))?;
        reports.push(report);
    }
    sink.emit(
        ctx.time_offset,
        "run",
        "run.end",
        obj(json!({
            "status": "completed",
            "episodes": ctx.episode_counter,
            "phases": reports.len(),
        })),
    )?;
    Ok(reports)
}

/// Runs into `<dir>/<run_id>.jsonl`. On failure the partial log is removed.
pub fn run_to_dir(scenario: &Scenario, seed_override: Option<u64>, dir: &Path) -> Result<RunOutcome, RunError> {
    let run_id = scenario.doc.run_id();
    let mut sink = LogSink::create(dir, &run_id)?;
    match execute(scenario, seed_override, &mut sink) {
        Ok(phases) => {
            let records = sink.records_written();
            let log_path = sink.close()?;
            Ok(RunOutcome {
                run_id,
                seed: effective_seed(scenario, seed_override),
                phases,
                records,
                log_path,
            })
        }
        Err(e) => {
            sink.discard()?;
            Err(e)
        }
    }
}

/// Runs into memory and returns the log bytes.
pub fn run_in_memory(scenario: &Scenario, seed_override: Option<u64>) -> Result<(RunOutcome, Vec<u8>), RunError> {
    let run_id = scenario.doc.run_id();
    let mut sink = LogSink::in_memory(&run_id);
    let phases = execute(scenario, seed_override, &mut sink)?;
    let records = sink.records_written();
    let bytes = sink.contents().unwrap_or_default().to_vec();
    Ok((
        RunOutcome {
            run_id,
            seed: effective_seed(scenario, seed_override),
            phases,
            records,
            log_path: None,
        },
        bytes,
    ))
}
