//! Python bindings: a thin JSON-string facade over the engine so Python
//! services can register targets, request decisions, feed events back,
//! and run simulations without an HTTP hop.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use explorex_core::registry::{Engine as CoreEngine, EngineOptions, ExploreRequest};
use explorex_core::simulate::{self, SimEnvironment};
use explorex_core::{sampling, Error, FeedbackEvent, StoreOptions, TargetConfig};

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::NotFound(_) => PyKeyError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn serde_err(err: serde_json::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// In-process decision engine. Structured payloads cross the boundary as
/// JSON strings; callers keep their own parsing.
#[pyclass]
pub struct Engine {
    inner: Arc<CoreEngine>,
}

#[pymethods]
impl Engine {
    /// Optional JSONL log paths make the session replayable offline.
    #[new]
    #[pyo3(signature = (exposure_log=None, events_log=None))]
    pub fn new(exposure_log: Option<PathBuf>, events_log: Option<PathBuf>) -> PyResult<Self> {
        let options = EngineOptions {
            store: StoreOptions { exposure_log, events_log, ..StoreOptions::default() },
            ..EngineOptions::default()
        };
        let inner = CoreEngine::new(options).map_err(to_py_err)?;
        Ok(Engine { inner: Arc::new(inner) })
    }

    pub fn register_target(&self, config_json: &str) -> PyResult<()> {
        let config = TargetConfig::from_json(config_json).map_err(to_py_err)?;
        self.inner.register_target(config).map_err(to_py_err)
    }

    pub fn subscribe(&self, target_id: &str) -> PyResult<()> {
        self.inner.subscribe(target_id).map_err(to_py_err)
    }

    pub fn unsubscribe(&self, target_id: &str) -> PyResult<()> {
        self.inner.unsubscribe(target_id).map_err(to_py_err)
    }

    /// One decision. Returns the response as JSON: data, decision_id,
    /// explored, and chosen_candidate_id when a candidate was served.
    #[pyo3(signature = (target_id, unit_id, data_json, attributes=None, transformer_id=None, timestamp_ms=None))]
    pub fn explore(
        &self,
        target_id: &str,
        unit_id: &str,
        data_json: &str,
        attributes: Option<BTreeMap<String, String>>,
        transformer_id: Option<String>,
        timestamp_ms: Option<u64>,
    ) -> PyResult<String> {
        let data = serde_json::from_str(data_json)
            .map_err(|err| PyValueError::new_err(format!("data_json: {err}")))?;
        let req = ExploreRequest {
            target_id: target_id.to_string(),
            unit_id: unit_id.to_string(),
            attributes: attributes.unwrap_or_default(),
            transformer_id,
            data,
            timestamp_ms,
        };
        let resp = self.inner.explore(&req).map_err(to_py_err)?;
        serde_json::to_string(&resp).map_err(serde_err)
    }

    pub fn ingest_event(
        &self,
        decision_id: &str,
        event_type: &str,
        timestamp_ms: u64,
    ) -> PyResult<()> {
        let event = FeedbackEvent {
            decision_id: decision_id.to_string(),
            event_type: event_type.into(),
            timestamp_ms,
        };
        self.inner.ingest_event(&event).map_err(to_py_err)
    }

    /// Live per-target stats as JSON.
    pub fn stats(&self, target_id: &str) -> PyResult<String> {
        let stats = self.inner.stats(target_id).map_err(to_py_err)?;
        serde_json::to_string(&stats).map_err(serde_err)
    }

    pub fn list_targets(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.list_targets()).map_err(serde_err)
    }
}

/// Drive a candidate-selection target through a Bernoulli environment and
/// return the per-epoch share report as CSV text.
#[pyfunction]
pub fn run_simulation(target_config_json: &str, env_json: &str) -> PyResult<String> {
    let config = TargetConfig::from_json(target_config_json).map_err(to_py_err)?;
    let env = SimEnvironment::from_json(env_json).map_err(to_py_err)?;
    let target_id = config.target_id.clone();
    let options = EngineOptions {
        // Wall-clock refresh would make runs nondeterministic.
        refresh_every_ms: None,
        ..EngineOptions::default()
    };
    let engine = CoreEngine::new(options).map_err(to_py_err)?;
    engine.register_target(config).map_err(to_py_err)?;
    let reports = simulate::run_simulation(&engine, &target_id, &env).map_err(to_py_err)?;
    let mut csv = Vec::new();
    simulate::write_csv(&reports, &env, &mut csv).map_err(to_py_err)?;
    String::from_utf8(csv).map_err(|err| PyValueError::new_err(err.to_string()))
}

/// Shannon entropy of a binary prediction, in bits.
#[pyfunction]
pub fn binary_entropy(score: f64) -> f64 {
    sampling::binary_entropy(score)
}

/// Multiclass entropy normalized to [0, 1] by log2(K).
#[pyfunction]
pub fn normalized_entropy(probs: Vec<f64>) -> f64 {
    sampling::normalized_entropy(&probs)
}

#[pyfunction]
pub fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    sampling::cosine_similarity(&a, &b).map_err(to_py_err)
}

/// Deterministic traffic bucketing: whether this unit falls inside the
/// target's sample rate.
#[pyfunction]
pub fn in_traffic(unit_id: &str, target_id: &str, sample_rate: f64) -> bool {
    explorex_core::registry::in_traffic(unit_id, target_id, sample_rate)
}

#[pymodule]
fn explorex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(in_traffic, m)?)?;
    Ok(())
}
