//! Python bindings: requests and the wire codec, an in-process backend, a
//! blocking client, a background server and the bench routines.

use std::net::TcpListener;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyConnectionError, PyRuntimeError, PyTimeoutError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use rfsoc_sequencer::backend::{init_backend, BoardName, BoardProfile, OverheadModel, QubitModel};
use rfsoc_sequencer::bench::{
    self, Endpoint, ExperimentKind, ExperimentParams, LocalEndpoint, Runcard,
};
use rfsoc_sequencer::client::{Client as RustClient, ClientError};
use rfsoc_sequencer::components::{
    self, validate_request, AcquisitionResult as RustResult, Sweeper,
};
use rfsoc_sequencer::server::{Server as RustServer, ServerConfig, ServerHandle};
use rfsoc_sequencer::wire::{self, ResponseEnvelope};

create_exception!(
    rfsoc_sequencer,
    ServerError,
    PyRuntimeError,
    "Error reported by the server."
);

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn client_error(e: ClientError) -> PyErr {
    match e {
        ClientError::Server(message) => ServerError::new_err(message),
        ClientError::Timeout => PyTimeoutError::new_err(e.to_string()),
        ClientError::Connect { .. } | ClientError::Frame(_) => {
            PyConnectionError::new_err(e.to_string())
        }
        ClientError::Encode(_) | ClientError::Decode(_) => value_error(e),
    }
}

fn board(name: &str) -> PyResult<BoardName> {
    name.parse().map_err(PyValueError::new_err)
}

fn kind(name: &str) -> PyResult<ExperimentKind> {
    name.parse().map_err(PyValueError::new_err)
}

fn model(json: Option<&str>) -> PyResult<QubitModel> {
    let Some(json) = json else {
        return Ok(QubitModel::default());
    };
    let model: QubitModel = serde_json::from_str(json).map_err(value_error)?;
    model.validate().map_err(value_error)?;
    Ok(model)
}

/// One experiment request, held in its validated wire form.
#[pyclass(module = "rfsoc_sequencer", frozen, skip_from_py_object)]
#[derive(Clone)]
struct ExperimentRequest(components::ExperimentRequest);

#[pymethods]
impl ExperimentRequest {
    /// Parses a JSON request with the wire schema.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        wire::decode_request(text.as_bytes())
            .map(Self)
            .map_err(value_error)
    }

    /// Builds a request from a dict with the wire schema.
    #[staticmethod]
    fn from_dict(py: Python<'_>, data: &Bound<'_, PyDict>) -> PyResult<Self> {
        let text: String = py
            .import("json")?
            .call_method1("dumps", (data,))?
            .extract()?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> PyResult<String> {
        let bytes = wire::encode_request(&self.0).map_err(value_error)?;
        String::from_utf8(bytes).map_err(value_error)
    }

    /// The exact payload bytes sent on the wire.
    fn encode<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = wire::encode_request(&self.0).map_err(value_error)?;
        Ok(PyBytes::new(py, &bytes))
    }

    /// The payload with its length header.
    fn frame<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = wire::encode_request(&self.0).map_err(value_error)?;
        let framed = wire::frame_write(&bytes).map_err(value_error)?;
        Ok(PyBytes::new(py, &framed))
    }

    /// Rule violations on `board`; empty when the request is executable.
    #[pyo3(signature = (board_name = "ZCU216"))]
    fn validate(&self, board_name: &str) -> PyResult<Vec<String>> {
        let profile = BoardProfile::for_board(board(board_name)?);
        Ok(validate_request(&self.0, &profile)
            .iter()
            .map(ToString::to_string)
            .collect())
    }

    #[getter]
    fn operation_code(&self) -> &'static str {
        self.0.operation_code.wire_name()
    }

    #[getter]
    fn point_count(&self) -> usize {
        self.0.point_count()
    }

    #[getter]
    fn readout_count(&self) -> usize {
        self.0.readout_count()
    }

    #[getter]
    fn sequence_duration(&self) -> f64 {
        self.0.sequence_duration()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentRequest({}, pulses={}, points={})",
            self.0.operation_code.wire_name(),
            self.0.sequence.len(),
            self.0.point_count()
        )
    }
}

/// IQ data in row-major order with its shape.
#[pyclass(module = "rfsoc_sequencer", frozen)]
struct AcquisitionResult(RustResult);

#[pymethods]
impl AcquisitionResult {
    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    #[getter]
    fn i(&self) -> Vec<f64> {
        self.0.i().to_vec()
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.0.q().to_vec()
    }

    /// `(i, q)` of readout `k`.
    fn readout(&self, k: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let readouts = self.0.shape().first().copied().unwrap_or(0);
        if k >= readouts {
            return Err(PyValueError::new_err(format!("readout {k} of {readouts}")));
        }
        let (i, q) = self.0.readout(k);
        Ok((i.to_vec(), q.to_vec()))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("AcquisitionResult(shape={:?})", self.0.shape())
    }
}

/// A simulated board in this process, reached through the server's
/// validation and dispatch path.
#[pyclass(module = "rfsoc_sequencer")]
struct Backend(LocalEndpoint);

#[pymethods]
impl Backend {
    #[new]
    #[pyo3(signature = (board_name = "ZCU216", seed = 0, model_json = None))]
    fn new(board_name: &str, seed: u64, model_json: Option<&str>) -> PyResult<Self> {
        let backend = init_backend(
            model(model_json)?,
            BoardProfile::for_board(board(board_name)?),
            seed,
            OverheadModel::default(),
        );
        Ok(Self(LocalEndpoint::new(backend)))
    }

    fn execute(
        &mut self,
        py: Python<'_>,
        request: &ExperimentRequest,
    ) -> PyResult<AcquisitionResult> {
        let endpoint = &mut self.0;
        py.detach(|| endpoint.execute(&request.0))
            .map(AcquisitionResult)
            .map_err(client_error)
    }

    #[getter]
    fn clock_phase(&self) -> f64 {
        self.0.backend().clock_phase()
    }

    /// Simulated qubit time consumed so far, seconds.
    #[getter]
    fn hardware_time(&self) -> f64 {
        self.0.backend().hardware_time()
    }

    #[getter]
    fn program_loads(&self) -> u64 {
        self.0.backend().program_loads()
    }
}

/// Blocking client; one connection per request.
#[pyclass(module = "rfsoc_sequencer", frozen)]
struct Client(RustClient);

#[pymethods]
impl Client {
    #[new]
    #[pyo3(signature = (address, timeout = 60.0))]
    fn new(address: String, timeout: f64) -> PyResult<Self> {
        let timeout = Duration::try_from_secs_f64(timeout).map_err(value_error)?;
        Ok(Self(RustClient::new(address).with_timeout(timeout)))
    }

    fn execute(&self, py: Python<'_>, request: &ExperimentRequest) -> PyResult<AcquisitionResult> {
        py.detach(|| self.0.execute(&request.0))
            .map(AcquisitionResult)
            .map_err(client_error)
    }

    /// Sends already framed bytes and returns the raw response payload.
    fn send_raw<'py>(&self, py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let response = py.detach(|| self.0.send_raw(data)).map_err(client_error)?;
        Ok(PyBytes::new(py, &response))
    }

    #[getter]
    fn address(&self) -> &str {
        self.0.addr()
    }
}

/// A server on a background thread. Port 0 picks a free port.
#[pyclass(module = "rfsoc_sequencer")]
struct Server {
    handle: Option<ServerHandle>,
    address: String,
}

#[pymethods]
impl Server {
    #[new]
    #[pyo3(signature = (bind = "127.0.0.1:0", board_name = "ZCU216", seed = 0, model_json = None))]
    fn new(bind: &str, board_name: &str, seed: u64, model_json: Option<&str>) -> PyResult<Self> {
        let listener =
            TcpListener::bind(bind).map_err(|e| PyConnectionError::new_err(e.to_string()))?;
        let board = board(board_name)?;
        let backend = init_backend(
            model(model_json)?,
            BoardProfile::for_board(board),
            seed,
            OverheadModel::default(),
        );
        let config = ServerConfig {
            bind: bind.into(),
            board,
            seed: Some(seed),
            ..ServerConfig::default()
        };
        let handle = RustServer::with_listener(listener, backend, config)
            .spawn()
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Self {
            address: handle.addr().to_string(),
            handle: Some(handle),
        })
    }

    /// `host:port` the server listens on.
    #[getter]
    fn address(&self) -> &str {
        &self.address
    }

    #[getter]
    fn clock_phase(&self) -> PyResult<f64> {
        self.handle
            .as_ref()
            .map(ServerHandle::clock_phase)
            .ok_or_else(|| PyRuntimeError::new_err("server stopped"))
    }

    /// Requests served so far, failed ones included.
    #[getter]
    fn served(&self) -> usize {
        self.handle
            .as_ref()
            .map_or(0, |h| h.journal().records().len())
    }

    fn stop(&mut self, py: Python<'_>) {
        if let Some(handle) = self.handle.take() {
            py.detach(|| handle.stop());
        }
    }

    fn __enter__(slf: Py<Self>) -> Py<Self> {
        slf
    }

    fn __exit__(
        &mut self,
        py: Python<'_>,
        _exc_type: Option<Bound<'_, PyAny>>,
        _exc: Option<Bound<'_, PyAny>>,
        _traceback: Option<Bound<'_, PyAny>>,
    ) {
        self.stop(py);
    }
}

/// Prepends the 4-byte big-endian length.
#[pyfunction]
fn frame<'py>(py: Python<'py>, payload: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let framed = wire::frame_write(payload).map_err(value_error)?;
    Ok(PyBytes::new(py, &framed))
}

/// Strips the length header from one complete frame.
#[pyfunction]
fn unframe<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let mut reader = data;
    let payload = wire::frame_read(&mut reader).map_err(value_error)?;
    if !reader.is_empty() {
        return Err(PyValueError::new_err(format!(
            "{} bytes after the frame",
            reader.len()
        )));
    }
    Ok(PyBytes::new(py, &payload))
}

/// Decodes a response payload; error envelopes raise `ServerError`.
#[pyfunction]
fn decode_results(payload: &[u8]) -> PyResult<AcquisitionResult> {
    match wire::decode_results(payload).map_err(value_error)? {
        ResponseEnvelope::Ok(result) => Ok(AcquisitionResult(result)),
        ResponseEnvelope::Error(message) => Err(ServerError::new_err(message)),
    }
}

/// `n_shots * sum(duration + relaxation)` in seconds.
#[pyfunction]
fn ideal_time(n_shots: u64, durations: Vec<f64>, relaxation: f64) -> f64 {
    bench::ideal_time(n_shots, &durations, relaxation)
}

/// Flattened grid of a JSON list of sweepers, outermost first. Each point
/// is a list of `(parameter, index, value)`.
#[pyfunction]
fn sweep_grid(sweepers_json: &str) -> PyResult<Vec<Vec<(String, usize, f64)>>> {
    let sweepers: Vec<Sweeper> = serde_json::from_str(sweepers_json).map_err(value_error)?;
    let grid = components::sweep_grid(&sweepers);
    grid.assignments
        .iter()
        .map(|point| {
            point
                .iter()
                .map(|u| {
                    let name = serde_json::to_value(u.parameter).map_err(value_error)?;
                    Ok((
                        name.as_str().unwrap_or_default().to_owned(),
                        u.index,
                        u.value,
                    ))
                })
                .collect()
        })
        .collect()
}

enum Target {
    Remote(RustClient),
    Local(Box<LocalEndpoint>),
}

impl Endpoint for Target {
    fn execute(
        &mut self,
        request: &components::ExperimentRequest,
    ) -> Result<RustResult, ClientError> {
        match self {
            Target::Remote(client) => client.execute(request),
            Target::Local(local) => local.execute(request),
        }
    }
}

fn target(server: Option<String>, seed: u64, model: &QubitModel) -> Target {
    match server {
        Some(addr) => Target::Remote(RustClient::new(addr)),
        None => Target::Local(Box::new(LocalEndpoint::new(init_backend(
            model.clone(),
            BoardProfile::zcu216(),
            seed,
            OverheadModel::default(),
        )))),
    }
}

fn bench_error(e: bench::BenchError) -> PyErr {
    match e {
        bench::BenchError::Request { source, .. } => client_error(source),
        bench::BenchError::Parameters(_) => value_error(e),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Runs a calibration routine. Returns a dict with `axes`, `i`, `q`,
/// `accounting` and `estimate` (a `(name, value)` pair or None).
#[pyfunction]
#[pyo3(signature = (
    kind_name, points = 101, shots = 4096, relaxation = None, drive_center = None,
    bias = 0.0, seed = 0, server = None, model_json = None
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    kind_name: &str,
    points: usize,
    shots: u64,
    relaxation: Option<f64>,
    drive_center: Option<f64>,
    bias: f64,
    seed: u64,
    server: Option<String>,
    model_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = kind(kind_name)?;
    let model = model(model_json)?;
    let card = Runcard::from_model(&model, bias);
    let params = ExperimentParams {
        points,
        shots,
        relaxation,
        drive_center,
    };
    let mut endpoint = target(server, seed, &model);
    let data = py
        .detach(|| bench::run_experiment(kind, &mut endpoint, &card, &params))
        .map_err(bench_error)?;
    let estimate = match bench::analyze(&data) {
        Ok(found) => found.map(|e| (e.name, e.value)),
        Err(_) => None,
    };
    let out = PyDict::new(py);
    out.set_item("kind", kind.name())?;
    let axes: Vec<(&str, Vec<f64>)> = data
        .axes
        .iter()
        .map(|a| (a.name, a.values.clone()))
        .collect();
    out.set_item("axes", axes)?;
    out.set_item("i", data.i.clone())?;
    out.set_item("q", data.q.clone())?;
    let accounting = PyDict::new(py);
    accounting.set_item("requests", data.accounting.requests)?;
    accounting.set_item("connections", data.accounting.connections)?;
    accounting.set_item("program_loads", data.accounting.program_loads)?;
    accounting.set_item("ideal_s", data.accounting.ideal_s)?;
    out.set_item("accounting", accounting)?;
    out.set_item("estimate", estimate)?;
    Ok(out)
}

/// Wall against ideal time of `kind` at each point count. Returns one dict
/// per row with `kind`, `points`, `wall_s`, `ideal_s` and `ratio`.
#[pyfunction]
#[pyo3(signature = (kind_name, points, shots = 1024, seed = 0, server = None))]
fn scaling_report<'py>(
    py: Python<'py>,
    kind_name: &str,
    points: Vec<usize>,
    shots: u64,
    seed: u64,
    server: Option<String>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind = kind(kind_name)?;
    let model = QubitModel::default();
    let card = Runcard::from_model(&model, 0.0);
    let params = ExperimentParams {
        shots,
        ..ExperimentParams::default()
    };
    let mut endpoint = target(server, seed, &model);
    let rows = py
        .detach(|| {
            bench::scaling_report(
                kind,
                &points,
                &mut endpoint,
                &card,
                &params,
                &OverheadModel::default(),
            )
        })
        .map_err(bench_error)?;
    rows.into_iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("kind", row.kind.name())?;
            d.set_item("points", row.points)?;
            d.set_item("wall_s", row.wall_s)?;
            d.set_item("ideal_s", row.ideal_s)?;
            d.set_item("ratio", row.ratio)?;
            Ok(d)
        })
        .collect()
}

/// Adds the classes and functions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ExperimentRequest>()?;
    m.add_class::<AcquisitionResult>()?;
    m.add_class::<Backend>()?;
    m.add_class::<Client>()?;
    m.add_class::<Server>()?;
    m.add("ServerError", m.py().get_type::<ServerError>())?;
    m.add_function(wrap_pyfunction!(frame, m)?)?;
    m.add_function(wrap_pyfunction!(unframe, m)?)?;
    m.add_function(wrap_pyfunction!(decode_results, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_time, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_grid, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_report, m)?)?;
    let kinds: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
    m.add("EXPERIMENT_KINDS", kinds)?;
    m.add("HEADER_LEN", wire::HEADER_LEN)?;
    Ok(())
}

#[pymodule]
#[pyo3(name = "rfsoc_sequencer")]
fn rfsoc_sequencer_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
