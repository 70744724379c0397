//! Timing model, calibration templates, fits and the sweep-scaling study.
//!
//! The ideal time of an experiment is the qubit time it needs:
//! `shots * sum_i (T_sequence_i + T_relaxation)` over its sweep points. The
//! wall time adds a fixed cost per connection and per program load, so an
//! experiment run as one real-time sweep pays the overhead once while a
//! client-side loop pays it at every point.

pub mod fit;
pub mod plot;
mod templates;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{simulated_wall_time, BackendState, OverheadModel};
use crate::client::{Client, ClientError};
use crate::components::{AcquisitionResult, ExperimentRequest};
use crate::server::{process_payload, ExecutionLimits};
use crate::wire::{self, ResponseEnvelope};

pub use templates::{
    analyze, build_plan, flux_map_peaks, run_experiment, run_plan, Accounting, Axis, Dataset,
    Estimate, ExperimentKind, ExperimentParams, ExperimentPlan, Runcard,
};

const ATTOSECONDS_PER_SECOND: f64 = 1e18;

fn attoseconds(seconds: f64) -> i128 {
    (seconds * ATTOSECONDS_PER_SECOND).round() as i128
}

/// `n_shots * sum_i (duration_i + relaxation)`, in seconds.
///
/// Accumulated on an integer attosecond grid, so decimal inputs give the
/// correctly rounded decimal result: `ideal_time(4096, &[2e-6], 300e-6)` is
/// exactly `1.236992`, where plain float arithmetic lands one ulp below.
pub fn ideal_time(n_shots: u64, durations: &[f64], relaxation: f64) -> f64 {
    let relaxation = attoseconds(relaxation);
    let per_shot: i128 = durations.iter().map(|&d| attoseconds(d) + relaxation).sum();
    (per_shot * i128::from(n_shots)) as f64 / ATTOSECONDS_PER_SECOND
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("request {index} failed: {source}")]
    Request { index: usize, source: ClientError },
    #[error("unexpected result shape {shape:?} for request {index}")]
    Shape { index: usize, shape: Vec<usize> },
    #[error("invalid parameters: {0}")]
    Parameters(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Something that executes requests: a remote server or an in-process backend.
pub trait Endpoint {
    fn execute(&mut self, request: &ExperimentRequest) -> Result<AcquisitionResult, ClientError>;
}

impl Endpoint for Client {
    fn execute(&mut self, request: &ExperimentRequest) -> Result<AcquisitionResult, ClientError> {
        Client::execute(self, request)
    }
}

/// Runs requests on an owned backend through the same decode, validation
/// and dispatch path as the server, without a socket.
#[derive(Debug, Clone)]
pub struct LocalEndpoint {
    backend: BackendState,
    limits: ExecutionLimits,
}

impl LocalEndpoint {
    pub fn new(backend: BackendState) -> Self {
        Self {
            backend,
            limits: ExecutionLimits::default(),
        }
    }

    pub fn backend(&self) -> &BackendState {
        &self.backend
    }
}

impl Endpoint for LocalEndpoint {
    fn execute(&mut self, request: &ExperimentRequest) -> Result<AcquisitionResult, ClientError> {
        let payload = wire::encode_request(request)?;
        match process_payload(&payload, &mut self.backend, &self.limits).0 {
            ResponseEnvelope::Ok(result) => Ok(result),
            ResponseEnvelope::Error(message) => Err(ClientError::Server(message)),
        }
    }
}

/// One line of a scaling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub kind: ExperimentKind,
    pub points: usize,
    pub wall_s: f64,
    pub ideal_s: f64,
    pub ratio: f64,
}

impl ScalingRow {
    pub fn from_accounting(
        kind: ExperimentKind,
        points: usize,
        accounting: &Accounting,
        overheads: &OverheadModel,
    ) -> Self {
        let wall_s = simulated_wall_time(
            accounting.program_loads,
            accounting.connections,
            accounting.ideal_s,
            overheads,
        );
        Self {
            kind,
            points,
            wall_s,
            ideal_s: accounting.ideal_s,
            ratio: wall_s / accounting.ideal_s,
        }
    }
}

/// Runs `kind` at each point count and reports simulated wall time against
/// ideal time. `params.points` is overridden per row.
pub fn scaling_report<E: Endpoint>(
    kind: ExperimentKind,
    point_counts: &[usize],
    endpoint: &mut E,
    runcard: &Runcard,
    params: &ExperimentParams,
    overheads: &OverheadModel,
) -> Result<Vec<ScalingRow>, BenchError> {
    point_counts
        .iter()
        .map(|&points| {
            let params = ExperimentParams {
                points,
                ..params.clone()
            };
            let plan = build_plan(kind, runcard, &params)?;
            let dataset = run_plan(&plan, endpoint)?;
            Ok(ScalingRow::from_accounting(
                kind,
                points,
                &dataset.accounting,
                overheads,
            ))
        })
        .collect()
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], writer: W) -> Result<(), BenchError> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_scaling_csv<R: Read>(reader: R) -> Result<Vec<ScalingRow>, BenchError> {
    let mut csv = csv::Reader::from_reader(reader);
    Ok(csv.deserialize().collect::<Result<_, _>>()?)
}

/// Writes one row per grid point: the axis values, then `i`, `q` and the
/// magnitude.
pub fn write_dataset_csv<W: Write>(data: &Dataset, writer: W) -> Result<(), BenchError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.axes.iter().map(|a| a.name).collect();
    header.extend(["i", "q", "magnitude"]);
    csv.write_record(&header)?;
    let magnitude = data.magnitude();
    for (k, ((i, q), m)) in data.i.iter().zip(&data.q).zip(&magnitude).enumerate() {
        let mut record = Vec::with_capacity(header.len());
        let mut rest = k;
        let mut coords = vec![0.0; data.axes.len()];
        for (slot, axis) in coords.iter_mut().zip(&data.axes).rev() {
            *slot = axis.values[rest % axis.values.len()];
            rest /= axis.values.len();
        }
        record.extend(coords.iter().map(f64::to_string));
        record.extend([i, q, m].map(f64::to_string));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}
