//! Python bindings: scenarios, runs, the radio model and the wire format.
//!
//! ```python
//! import pfsim
//! result = pfsim.run(pfsim.Scenario.preset("cafe"), seed=1)
//! result.counters["success"]
//! ```

use std::collections::BTreeMap;

use pfsim_core::prefs::{self, NeighborhoodEntry, NeighborhoodPreferenceList, SimilarityData};
use pfsim_core::radio::{self, RadioParams};
use pfsim_core::scenario::{self, ScenarioConfig, PRESETS};
use pfsim_core::sim::{self, metrics, RunOutput};
use pfsim_core::wire::{self, ContextStamp, ExchangeMessage};
use pfsim_core::{ItemId, PeerId};
use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated scenario.
#[pyclass(name = "Scenario", module = "pfsim", frozen)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Parses and validates a JSON scenario document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        scenario::validate(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        scenario::preset(name).map(|inner| Self { inner }).map_err(value_err)
    }

    /// The scenario with every default filled in, as JSON.
    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn peers(&self) -> usize {
        self.inner.peers
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s
    }

    #[getter]
    fn ticks(&self) -> u64 {
        self.inner.ticks()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, peers={}, duration_s={})",
            self.inner.name, self.inner.peers, self.inner.duration_s
        )
    }
}

/// The final world, per-tick metrics and event log of one run.
#[pyclass(name = "RunResult", module = "pfsim", frozen)]
struct PyRunResult {
    out: RunOutput,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn ticks(&self) -> usize {
        self.out.metrics.len()
    }

    #[getter]
    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.out.world.counters;
        let d = PyDict::new(py);
        d.set_item("sessions_opened", c.sessions_opened)?;
        d.set_item("success", c.success)?;
        d.set_item("failed_range", c.failed_range)?;
        d.set_item("failed_dwell", c.failed_dwell)?;
        d.set_item("failed_probabilistic", c.failed_probabilistic)?;
        d.set_item("messages", c.messages)?;
        d.set_item("bytes_exchanged", c.bytes_exchanged)?;
        d.set_item("admissions", c.admissions)?;
        Ok(d)
    }

    /// Within/cross community coverage ratio; `inf` when nothing crossed,
    /// `None` for single-community scenarios.
    #[getter]
    fn flow_ratio(&self) -> Option<f64> {
        sim::flow_ratio(&self.out.world).ok()
    }

    #[getter]
    fn relay_reachability(&self) -> u64 {
        sim::relay_reachability(&self.out.world, &self.out.events)
    }

    #[getter]
    fn battery_pct(&self) -> Vec<f64> {
        self.out.world.peers.iter().map(|p| p.energy.battery_pct).collect()
    }

    #[getter]
    fn peer_ids(&self) -> Vec<String> {
        self.out.world.peers.iter().map(|p| p.pseudo_id.as_str().to_string()).collect()
    }

    /// Fraction of peers whose neighborhood list holds `item`.
    fn coverage(&self, item: &str) -> PyResult<f64> {
        let item = ItemId::new(item).map_err(value_err)?;
        Ok(sim::coverage(&self.out.world, &item))
    }

    /// Neighborhood list of peer `index` as `{item: (value, weight)}`.
    fn neighborhood(&self, index: usize) -> PyResult<BTreeMap<String, (f64, u32)>> {
        let peer = self.out.world.peers.get(index).ok_or_else(|| PyIndexError::new_err(index))?;
        Ok(peer.nbhd.iter().map(|(i, e)| (i.as_str().to_string(), (e.value(), e.weight()))).collect())
    }

    /// Own ratings of peer `index`.
    fn ratings(&self, index: usize) -> PyResult<BTreeMap<String, u8>> {
        let peer = self.out.world.peers.get(index).ok_or_else(|| PyIndexError::new_err(index))?;
        Ok(peer.prefs.ratings().iter().map(|(i, v)| (i.as_str().to_string(), *v)).collect())
    }

    fn metrics_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        metrics::write_csv(&self.out.metrics, &mut buf).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }

    fn events_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.out.events.write_jsonl(&mut buf).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }
}

/// Runs `scenario` for its duration, or for `ticks` ticks when given.
#[pyfunction]
#[pyo3(signature = (scenario, seed = 0, ticks = None))]
fn run(scenario: &PyScenario, seed: u64, ticks: Option<u64>) -> PyResult<PyRunResult> {
    let ticks = ticks.unwrap_or_else(|| scenario.inner.ticks());
    sim::run_ticks(&scenario.inner, seed, ticks).map(|out| PyRunResult { out }).map_err(value_err)
}

/// Connection success probability at `distance_m` under the default model.
#[pyfunction]
#[pyo3(signature = (distance_m, obstacles = false))]
fn success_probability(distance_m: f64, obstacles: bool) -> f64 {
    radio::success_probability(distance_m, obstacles, &RadioParams::default())
}

#[pyfunction]
#[pyo3(signature = (n, seed = 0))]
fn sample_delays(n: usize, seed: u64) -> Vec<f64> {
    let params = RadioParams::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| radio::sample_delay(&params, &mut rng)).collect()
}

fn similarity(ratings: BTreeMap<String, u8>) -> PyResult<SimilarityData> {
    ratings
        .into_iter()
        .map(|(k, v)| ItemId::new(k).map(|i| (i, v)))
        .collect::<Result<SimilarityData, _>>()
        .map_err(value_err)
}

/// Cosine similarity of two `{item: stars}` vectors; `None` when they share
/// fewer than `min_overlap` items.
#[pyfunction]
#[pyo3(signature = (a, b, min_overlap = prefs::DEFAULT_MIN_OVERLAP))]
fn cosine_similarity(a: BTreeMap<String, u8>, b: BTreeMap<String, u8>, min_overlap: usize) -> PyResult<Option<f64>> {
    Ok(prefs::cosine_similarity(&similarity(a)?, &similarity(b)?, min_overlap))
}

/// Encodes one exchange message. `neighborhood` maps items to
/// `(value, weight)`.
#[pyfunction]
#[pyo3(signature = (sender, similarity_data, neighborhood, x = 0.0, y = 0.0, t = 0.0))]
fn encode_message<'py>(
    py: Python<'py>,
    sender: &str,
    similarity_data: BTreeMap<String, u8>,
    neighborhood: BTreeMap<String, (f64, u32)>,
    x: f64,
    y: f64,
    t: f64,
) -> PyResult<Bound<'py, PyBytes>> {
    let mut nbhd = NeighborhoodPreferenceList::new(neighborhood.len().max(1)).map_err(value_err)?;
    for (item, (value, weight)) in neighborhood {
        let entry = NeighborhoodEntry::new(value, weight).map_err(value_err)?;
        nbhd.insert(ItemId::new(item).map_err(value_err)?, entry).map_err(value_err)?;
    }
    let msg =
        ExchangeMessage::build(PeerId::new(sender), ContextStamp { x, y, t }, &similarity(similarity_data)?, &nbhd);
    let bytes = wire::encode(&msg).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Decodes one exchange message into a dict with `sender`, `x`, `y`, `t`,
/// `similarity` and `neighborhood`.
#[pyfunction]
fn decode_message<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let msg = wire::decode(data).map_err(value_err)?;
    let sim_data = msg.similarity_data().map_err(value_err)?;
    let nbhd = msg.neighborhood(msg.neighborhood_payload.len().max(1)).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("sender", msg.sender.as_str())?;
    d.set_item("x", msg.context.x)?;
    d.set_item("y", msg.context.y)?;
    d.set_item("t", msg.context.t)?;
    let s: BTreeMap<&str, u8> = sim_data.vector.iter().map(|(i, v)| (i.as_str(), *v)).collect();
    d.set_item("similarity", s)?;
    let n: BTreeMap<&str, (f64, u32)> = nbhd.iter().map(|(i, e)| (i.as_str(), (e.value(), e.weight()))).collect();
    d.set_item("neighborhood", n)?;
    Ok(d)
}

#[pymodule]
pub fn pfsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(success_probability, m)?)?;
    m.add_function(wrap_pyfunction!(sample_delays, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(encode_message, m)?)?;
    m.add_function(wrap_pyfunction!(decode_message, m)?)?;
    m.add("PRESETS", PRESETS.to_vec())?;
    m.add("RECORD_LEN", wire::RECORD_LEN)?;
    Ok(())
}
