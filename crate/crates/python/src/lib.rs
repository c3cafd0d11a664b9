//! Python bindings for the offloading simulator.

use moesim::cache::{CacheError, ExpertCache, ExpertId, InsertOrigin};
use moesim::config::{ConfigError, ExperimentConfig, Policy};
use moesim::cutoff::{feasibility_report, solve_cutoff, CutoffInput};
use moesim::predictor;
use moesim::presets;
use moesim::report::{reports_csv, SimReport};
use moesim::sim::{self, SimError, SweepParam};
use moesim::trace::{self, ActivationTrace, OverlapPairing, TraceError, TraceParams};
use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn config_err(e: ConfigError) -> PyErr {
    match e {
        ConfigError::NotFound { .. } => PyFileNotFoundError::new_err(e.to_string()),
        ConfigError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn trace_err(e: TraceError) -> PyErr {
    match e {
        TraceError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            PyFileNotFoundError::new_err(e.to_string())
        }
        TraceError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Cache(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn cache_err(e: CacheError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

/// An experiment: model, hardware, timings and policy.
#[pyclass(name = "Config", module = "moesim_py")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        moesim::load_config(path).map(|inner| PyConfig { inner }).map_err(config_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml_str(text)
            .map(|inner| PyConfig { inner })
            .map_err(config_err)
    }

    /// `mixtral-desk` or `deepseek-desk`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        presets::by_name(name)
            .map(|inner| PyConfig { inner })
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        moesim::write_config(&self.inner, path).map_err(config_err)
    }

    /// Copy with a different policy.
    fn with_policy(&self, policy: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: self.inner.with_policy(parse(policy)?),
        })
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(config_err)
    }

    fn cache_slots(&self) -> usize {
        self.inner.cache_slots()
    }

    /// Deepest layer the drafting-stage policy prefetches, if it applies.
    fn effective_cutoff(&self) -> Option<usize> {
        sim::effective_cutoff(&self.inner)
    }

    #[getter]
    fn model_name(&self) -> String {
        self.inner.model.name.clone()
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.model.num_layers
    }

    #[getter]
    fn experts_per_layer(&self) -> usize {
        self.inner.model.experts_per_layer
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.policy.policy.as_str()
    }

    #[setter]
    fn set_policy(&mut self, v: &str) -> PyResult<()> {
        self.inner.policy.policy = parse(v)?;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.policy.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.policy.seed = v;
    }

    #[getter]
    fn draft_length(&self) -> usize {
        self.inner.policy.draft_length
    }

    #[setter]
    fn set_draft_length(&mut self, v: usize) {
        self.inner.policy.draft_length = v;
    }

    #[getter]
    fn prefetch_k(&self) -> usize {
        self.inner.policy.prefetch_k
    }

    #[setter]
    fn set_prefetch_k(&mut self, v: usize) {
        self.inner.policy.prefetch_k = v;
    }

    #[getter]
    fn cutoff_layer(&self) -> Option<usize> {
        self.inner.policy.cutoff_layer
    }

    #[setter]
    fn set_cutoff_layer(&mut self, v: Option<usize>) {
        self.inner.policy.cutoff_layer = v;
    }

    #[getter]
    fn cache_capacity(&self) -> Option<usize> {
        self.inner.policy.cache_capacity
    }

    #[setter]
    fn set_cache_capacity(&mut self, v: Option<usize>) {
        self.inner.policy.cache_capacity = v;
    }

    #[getter]
    fn fidelity(&self) -> f64 {
        self.inner.policy.fidelity
    }

    #[setter]
    fn set_fidelity(&mut self, v: f64) {
        self.inner.policy.fidelity = v;
    }

    #[getter]
    fn acceptance_rate(&self) -> f64 {
        self.inner.policy.acceptance_rate
    }

    #[setter]
    fn set_acceptance_rate(&mut self, v: f64) {
        self.inner.policy.acceptance_rate = v;
    }

    #[getter]
    fn batched_io(&self) -> bool {
        self.inner.policy.batched_io
    }

    #[setter]
    fn set_batched_io(&mut self, v: bool) {
        self.inner.policy.batched_io = v;
    }

    #[getter]
    fn worker_prefetch(&self) -> bool {
        self.inner.policy.worker_prefetch
    }

    #[setter]
    fn set_worker_prefetch(&mut self, v: bool) {
        self.inner.policy.worker_prefetch = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(model={:?}, policy={:?}, seed={})",
            self.inner.model.name,
            self.inner.policy.policy.as_str(),
            self.inner.policy.seed
        )
    }
}

/// Per-token expert activations.
#[pyclass(name = "Trace", module = "moesim_py")]
struct PyTrace {
    inner: ActivationTrace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    #[pyo3(signature = (config, tokens, skew=1.0, correlation=0.5, seed=0, concentration=None))]
    fn generate(
        config: &PyConfig,
        tokens: usize,
        skew: f64,
        correlation: f64,
        seed: u64,
        concentration: Option<f64>,
    ) -> PyResult<Self> {
        let mut params = TraceParams::new(tokens, skew, correlation, seed);
        if let Some(c) = concentration {
            params.concentration = c;
        }
        trace::generate_synthetic_trace(&config.inner.model, params)
            .map(|inner| PyTrace { inner })
            .map_err(trace_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        trace::load_trace(path).map(|inner| PyTrace { inner }).map_err(trace_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        trace::save_trace(&self.inner, path).map_err(trace_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers
    }

    /// Activated experts of one token at one layer.
    fn activated(&self, token: usize, layer: usize) -> PyResult<Vec<usize>> {
        if token >= self.inner.len() || layer >= self.inner.num_layers {
            return Err(PyValueError::new_err("token or layer out of range"));
        }
        Ok(self.inner.layer(token, layer).activated.clone())
    }

    /// Per-layer activation rate over sliding windows of `window` tokens.
    fn activation_rate(&self, window: usize) -> PyResult<Vec<f64>> {
        trace::activation_rate(&self.inner, window).map_err(trace_err)
    }

    /// Mean fraction of token pairs whose routed sets intersect; adjacent
    /// pairs unless `pair_window` is given.
    #[pyo3(signature = (pair_window=None))]
    fn overlap(&self, pair_window: Option<usize>) -> PyResult<f64> {
        let pairing = pair_window.map_or(OverlapPairing::Adjacent, OverlapPairing::AllPairsWithin);
        trace::overlap_percentage(&self.inner, pairing)
            .map(|s| s.mean)
            .map_err(trace_err)
    }

    fn mean_entropy(&self) -> PyResult<Vec<f64>> {
        trace::mean_entropy(&self.inner).map_err(trace_err)
    }

    /// Predictor fidelity reaching `target` top-1 accuracy on this trace.
    #[pyo3(signature = (target, seed=0))]
    fn calibrate_fidelity(&self, target: f64, seed: u64) -> f64 {
        predictor::calibrate_fidelity(&self.inner, target, seed)
    }
}

/// Result of one simulation.
#[pyclass(name = "Report", module = "moesim_py", frozen)]
struct PyReport {
    inner: SimReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.policy.as_str()
    }

    #[getter]
    fn tpot_ms(&self) -> f64 {
        self.inner.tpot_ms()
    }

    #[getter]
    fn total_ms(&self) -> f64 {
        self.inner.total_time * 1e3
    }

    #[getter]
    fn emitted_tokens(&self) -> usize {
        self.inner.emitted_tokens
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn hit_rate(&self) -> f64 {
        self.inner.hit_rate
    }

    #[getter]
    fn eviction_rate(&self) -> f64 {
        self.inner.eviction_rate
    }

    #[getter]
    fn cutoff_layer(&self) -> Option<usize> {
        self.inner.cutoff_layer
    }

    #[getter]
    fn bytes_transferred(&self) -> u64 {
        self.inner.bytes_transferred
    }

    /// Fractions of wall time: draft, expert_load, attention_and_other.
    fn breakdown<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let f = self.inner.breakdown;
        d.set_item("draft", f.draft)?;
        d.set_item("expert_load", f.expert_load)?;
        d.set_item("attention_and_other", f.attention_and_other)?;
        Ok(d)
    }

    fn csv(&self) -> String {
        reports_csv(std::slice::from_ref(&self.inner))
    }

    fn transfers_csv(&self) -> String {
        self.inner.transfers_csv()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(policy={:?}, tpot_ms={:.3}, hit_rate={:.4})",
            self.inner.policy.as_str(),
            self.inner.tpot_ms(),
            self.inner.hit_rate
        )
    }
}

/// LRU expert cache with pinning and batched insertion.
#[pyclass(name = "ExpertCache", module = "moesim_py")]
struct PyCache {
    inner: ExpertCache,
}

fn ids(pairs: Vec<(usize, usize)>) -> Vec<ExpertId> {
    pairs.into_iter().map(|(l, e)| ExpertId::new(l, e)).collect()
}

fn pairs(ids: Vec<ExpertId>) -> Vec<(usize, usize)> {
    ids.into_iter().map(|id| (id.layer, id.expert)).collect()
}

#[pymethods]
impl PyCache {
    #[new]
    fn new(capacity: usize) -> Self {
        PyCache {
            inner: ExpertCache::new(capacity),
        }
    }

    #[pyo3(signature = (layer, expert, touch=true))]
    fn lookup(&mut self, layer: usize, expert: usize, touch: bool) -> bool {
        self.inner.lookup(ExpertId::new(layer, expert), touch)
    }

    /// Inserts `(layer, expert)` pairs and returns the evicted ones.
    #[pyo3(signature = (experts, origin="prefetch"))]
    fn insert_batch(&mut self, experts: Vec<(usize, usize)>, origin: &str) -> PyResult<Vec<(usize, usize)>> {
        let origin = match origin {
            "prefetch" => InsertOrigin::Prefetch,
            "on-demand" => InsertOrigin::OnDemand,
            "warm" => InsertOrigin::Warm,
            _ => return Err(PyValueError::new_err(format!("unknown origin {origin:?}"))),
        };
        self.inner
            .insert_batch(&ids(experts), origin)
            .map(pairs)
            .map_err(cache_err)
    }

    fn pin(&mut self, experts: Vec<(usize, usize)>) -> PyResult<()> {
        self.inner.pin(&ids(experts)).map_err(cache_err)
    }

    fn unpin(&mut self, experts: Vec<(usize, usize)>) {
        self.inner.unpin(&ids(experts));
    }

    /// Residents from least to most recently used.
    fn lru_order(&self) -> Vec<(usize, usize)> {
        pairs(self.inner.lru_order())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn hit_rate(&self) -> f64 {
        self.inner.hit_rate()
    }

    fn eviction_rate(&self) -> f64 {
        self.inner.eviction_rate()
    }
}

#[pyfunction]
fn simulate(config: &PyConfig, trace: &PyTrace) -> PyResult<PyReport> {
    sim::simulate(&config.inner, &trace.inner)
        .map(|inner| PyReport { inner })
        .map_err(sim_err)
}

/// Runs `config` under each policy (all four by default) on one trace.
#[pyfunction]
#[pyo3(signature = (config, trace, policies=None))]
fn compare(config: &PyConfig, trace: &PyTrace, policies: Option<Vec<String>>) -> PyResult<Vec<PyReport>> {
    let policies: Vec<Policy> = match policies {
        Some(names) => names.iter().map(|s| parse(s)).collect::<PyResult<_>>()?,
        None => Policy::ALL.to_vec(),
    };
    let configs: Vec<ExperimentConfig> = policies.iter().map(|&p| config.inner.with_policy(p)).collect();
    let reports = sim::compare_policies(&configs, &trace.inner).map_err(sim_err)?;
    Ok(reports.into_iter().map(|inner| PyReport { inner }).collect())
}

/// `(value, report)` per value of `param`.
#[pyfunction]
fn sweep(config: &PyConfig, trace: &PyTrace, param: &str, values: Vec<usize>) -> PyResult<Vec<(usize, PyReport)>> {
    let param: SweepParam = parse(param)?;
    let points = sim::sweep(param, &values, &config.inner, &trace.inner).map_err(sim_err)?;
    Ok(points
        .into_iter()
        .map(|p| (p.value, PyReport { inner: p.report }))
        .collect())
}

/// Cutoff for `config`, optionally overriding k and the timings (in ms).
#[pyfunction]
#[pyo3(signature = (config, k=None, t_comp_ms=None, t_io_ms=None, layers=None))]
fn solve_cutoff_for<'py>(
    py: Python<'py>,
    config: &PyConfig,
    k: Option<usize>,
    t_comp_ms: Option<f64>,
    t_io_ms: Option<f64>,
    layers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut input = CutoffInput::from_config(&config.inner);
    input.k = k.unwrap_or(input.k);
    input.t_comp = t_comp_ms.map_or(input.t_comp, |t| t * 1e-3);
    input.t_io = t_io_ms.map_or(input.t_io, |t| t * 1e-3);
    input.l_all = layers.unwrap_or(input.l_all);
    if input.k == 0 || input.l_all == 0 {
        return Err(PyValueError::new_err("k and layers must be at least 1"));
    }
    let r = solve_cutoff(&input);
    let at = feasibility_report(&input, r.l.unwrap_or(0)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("l", r.l)?;
    d.set_item("n_expert", r.n_expert)?;
    d.set_item("binding_constraint", r.binding_constraint.as_str())?;
    d.set_item("feasible", r.feasible)?;
    d.set_item("memory_slack_bytes", at.memory_slack_bytes)?;
    d.set_item("overlap_slack_ms", at.overlap_slack_secs * 1e3)?;
    Ok(d)
}

#[pymodule]
fn moesim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyCache>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(solve_cutoff_for, m)?)?;
    Ok(())
}
