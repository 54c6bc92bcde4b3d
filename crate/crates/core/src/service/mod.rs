//! Sessions, event logs, metrics and the client wire protocol.

mod event_log;
mod metrics;
pub mod protocol;
pub mod server;
mod session;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::assembly::AssemblyError;
use crate::catalog::CatalogError;
use crate::planner::PlannerError;
use crate::sim::{Scenario, SimError};
use crate::twin::TwinError;

pub use event_log::{EventLog, LOG_SCHEMA_VERSION};
pub use metrics::{percentile, Metrics, Timing};
pub use session::{kind_name, session_id, CandidateSummary, Command, Output, Session, StepInstruction};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("replay diverged at line {line}: {reason}")]
    ReplayDiverged { line: usize, reason: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no pending candidates")]
    NoPendingCandidates,
    #[error("candidate index {index} out of range ({len} candidates)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

impl From<SimError> for ServiceError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io { path, source } => ServiceError::Io { path, source },
            other => ServiceError::ScenarioInvalid(other.to_string()),
        }
    }
}

impl From<CatalogError> for ServiceError {
    fn from(e: CatalogError) -> Self {
        ServiceError::Assembly(AssemblyError::Catalog(e))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io { path: path.to_path_buf(), source }
}

/// Outcome of a headless run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub log: String,
    pub metrics: Metrics,
    pub timing: Timing,
}

/// Loads a scenario file with its catalog and model references inlined.
pub fn load_scenario(path: &Path) -> Result<Scenario, ServiceError> {
    Ok(Scenario::load(path)?)
}

/// Drives a session one frame at a time until it completes or runs out of frames.
pub fn run_headless(scenario: Scenario) -> Result<RunReport, ServiceError> {
    let mut session = Session::new(scenario)?;
    while !session.should_stop() {
        session.execute(Command::Tick { frames: 1 })?;
    }
    let log = session.finish();
    Ok(RunReport { log, metrics: session.metrics()?, timing: session.timing() })
}

/// Writes `events.jsonl`, `metrics.json` and `timing.json` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<(), ServiceError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))
    };
    write("events.jsonl", &report.log)?;
    write("metrics.json", &report.metrics.to_json())?;
    write("timing.json", &report.timing.to_json())?;
    Ok(())
}

/// Re-executes the commands in a log from its embedded scenario and checks
/// that every line comes out the same.
pub fn verify_log(text: &str) -> Result<String, ServiceError> {
    let (scenario, commands) = event_log::parse(text)?;
    let mut session = Session::new(scenario)?;
    for (line, command) in commands {
        session
            .execute(command)
            .map_err(|e| ServiceError::ReplayDiverged { line, reason: format!("command failed on replay: {e}") })?;
    }
    let hash = session.state_hash();
    let replayed = session.finish();
    event_log::compare(text, &replayed)?;
    Ok(hash)
}

pub fn verify_file(path: &Path) -> Result<String, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    verify_log(&text)
}
