//! Python bindings. Every function takes and returns JSON strings.

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Deserialize;
use serde_json::json;

use assembly_engine::assembly::{AssemblyState, Lattice, Placement};
use assembly_engine::catalog::{brick_catalog_document, nodal_catalog_document, Catalog, CatalogDocument};
use assembly_engine::planner::{sequence_graph, sequence_layered, PlanMode};
use assembly_engine::service::protocol::Connection;
use assembly_engine::service::{self, ServiceError};
use assembly_engine::sim::Scenario;
use assembly_engine::stability::{analyze, StabilityOptions};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("malformed request: {0}")]
    Request(#[from] serde_json::Error),
    #[error("unknown builtin catalog '{0}'")]
    UnknownCatalog(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Engine(String),
}

impl From<ApiError> for PyErr {
    fn from(e: ApiError) -> PyErr {
        PyValueError::new_err(e.to_string())
    }
}

fn engine<E: std::fmt::Display>(e: E) -> ApiError {
    ApiError::Engine(e.to_string())
}

/// A builtin catalog name or an inline catalog document.
#[derive(Deserialize)]
#[serde(untagged)]
enum CatalogRef {
    Builtin(String),
    Inline(CatalogDocument),
}

impl CatalogRef {
    fn catalog(self) -> Result<Catalog, ApiError> {
        let doc = match self {
            CatalogRef::Builtin(name) => match name.as_str() {
                "bricks" => brick_catalog_document(),
                "nodal" => nodal_catalog_document(),
                _ => return Err(ApiError::UnknownCatalog(name)),
            },
            CatalogRef::Inline(doc) => doc,
        };
        Catalog::from_document(doc).map_err(engine)
    }
}

#[derive(Deserialize)]
struct StructureRequest {
    catalog: CatalogRef,
    placements: Vec<Placement>,
    #[serde(default)]
    lattice: Lattice,
    #[serde(default)]
    mode: Option<PlanMode>,
    #[serde(default)]
    options: StabilityOptions,
}

struct Structure {
    catalog: Catalog,
    state: AssemblyState,
    lattice: Lattice,
    mode: Option<PlanMode>,
    options: StabilityOptions,
}

impl Structure {
    fn parse(text: &str) -> Result<Self, ApiError> {
        let req: StructureRequest = serde_json::from_str(text)?;
        let catalog = req.catalog.catalog()?;
        let state = AssemblyState::from_placements(req.placements, &catalog, None).map_err(engine)?;
        Ok(Structure { catalog, state, lattice: req.lattice, mode: req.mode, options: req.options })
    }
}

pub mod api {
    use super::*;

    /// Reads a scenario file and returns it with every reference inlined.
    pub fn load_scenario(path: &str) -> Result<String, ApiError> {
        Ok(service::load_scenario(Path::new(path))?.to_json())
    }

    /// Runs an inline scenario headless: `{log, metrics, timing}`.
    pub fn run_scenario(scenario: &str) -> Result<String, ApiError> {
        let sc = Scenario::from_json(scenario).map_err(ServiceError::from)?;
        let report = service::run_headless(sc)?;
        Ok(json!({ "log": report.log, "metrics": report.metrics, "timing": report.timing }).to_string())
    }

    /// Replays an event log; returns the final state hash.
    pub fn verify_log(log: &str) -> Result<String, ApiError> {
        Ok(service::verify_log(log)?)
    }

    pub fn analyze_stability(request: &str) -> Result<String, ApiError> {
        let s = Structure::parse(request)?;
        let report = analyze(&s.state, &s.catalog, &s.lattice, s.options).map_err(engine)?;
        Ok(serde_json::to_string(&report)?)
    }

    pub fn sequence(request: &str) -> Result<String, ApiError> {
        let s = Structure::parse(request)?;
        let plan = match s.mode.unwrap_or(PlanMode::Layer) {
            PlanMode::Layer => sequence_layered(&s.state, &s.catalog, &s.lattice),
            PlanMode::Graph => sequence_graph(&s.state, None, &s.catalog, &s.lattice),
        }
        .map_err(engine)?;
        Ok(serde_json::to_string(&plan)?)
    }

    pub fn protocol_version() -> u32 {
        service::protocol::PROTOCOL_VERSION
    }
}

#[pyfunction]
fn load_scenario(path: &str) -> PyResult<String> {
    Ok(api::load_scenario(path)?)
}

#[pyfunction]
fn run_scenario(py: Python<'_>, scenario: &str) -> PyResult<String> {
    Ok(py.detach(|| api::run_scenario(scenario))?)
}

#[pyfunction]
fn verify_log(py: Python<'_>, log: &str) -> PyResult<String> {
    Ok(py.detach(|| api::verify_log(log))?)
}

#[pyfunction]
fn analyze_stability(request: &str) -> PyResult<String> {
    Ok(api::analyze_stability(request)?)
}

#[pyfunction]
fn sequence(request: &str) -> PyResult<String> {
    Ok(api::sequence(request)?)
}

/// One protocol session driven in-process, as a UI client would over a socket.
#[pyclass(name = "Connection", unsendable)]
struct PyConnection {
    inner: Connection,
}

#[pymethods]
impl PyConnection {
    #[new]
    fn new() -> Self {
        PyConnection { inner: Connection::new() }
    }

    /// Handles one envelope; returns the reply envelopes.
    fn handle(&mut self, message: &str) -> Vec<String> {
        self.inner.handle_text(message).iter().map(|e| e.to_json()).collect()
    }

    #[getter]
    fn should_close(&self) -> bool {
        self.inner.should_close()
    }

    /// Ends the session; returns the event logs it produced.
    fn close(&mut self) -> Vec<String> {
        self.inner.close()
    }
}

#[pymodule]
fn assembly_engine_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PROTOCOL_VERSION", api::protocol_version())?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(verify_log, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_stability, m)?)?;
    m.add_function(wrap_pyfunction!(sequence, m)?)?;
    m.add_class::<PyConnection>()?;
    Ok(())
}
