//! Long-lived TCP service owning one backend for its whole lifetime.
//!
//! Connections are accepted and handled strictly one at a time; clients
//! that connect while an execution runs wait in the listen backlog. Each
//! connection carries one request frame and gets one response frame.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::backend::{
    init_backend, simulated_wall_time, BackendState, BoardName, BoardProfile, ModelError,
    OverheadModel, QubitModel,
};
use crate::components::{validate_request, AcquisitionResult, ExperimentRequest, OperationCode};
use crate::programs::{self, compile, ProgramError, Schedule};
use crate::wire::{self, FrameError, ResponseEnvelope};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: String,
    pub board: BoardName,
    /// Qubit model file; the built-in default model when absent.
    pub model: Option<PathBuf>,
    /// Backend seed; drawn from the OS when absent.
    pub seed: Option<u64>,
    pub overheads: OverheadModel,
    pub read_timeout: Duration,
    pub limits: ExecutionLimits,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:6000".into(),
            board: BoardName::Zcu216,
            model: None,
            seed: None,
            overheads: OverheadModel::default(),
            read_timeout: Duration::from_secs(30),
            limits: ExecutionLimits::default(),
        }
    }
}

/// Bounds that keep one request from exhausting memory or the execution lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionLimits {
    pub max_frame_bytes: u64,
    /// Samples of any single pulse envelope.
    pub max_pulse_samples: u64,
    /// Shots summed over all sweep points.
    pub max_total_shots: u64,
    /// Values in the returned `i` (and `q`) array.
    pub max_result_values: u64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            max_frame_bytes: 64 << 20,
            max_pulse_samples: 1 << 24,
            max_total_shots: 1 << 32,
            max_result_values: 1 << 26,
        }
    }
}

impl ExecutionLimits {
    /// Rejects requests whose cost exceeds the limits on `profile`.
    pub fn check(&self, request: &ExperimentRequest, profile: &BoardProfile) -> Result<(), String> {
        let longest = request
            .sequence
            .iter()
            .map(|p| p.duration.max(0.0))
            .chain(request.sweepers.iter().flat_map(|s| {
                s.parameters
                    .iter()
                    .zip(s.starts.iter().zip(&s.stops))
                    .filter(|(p, _)| **p == crate::components::Parameter::Duration)
                    .map(|(_, (a, b))| a.abs().max(b.abs()))
            }))
            .fold(0.0, f64::max);
        if longest * profile.dac_rate > self.max_pulse_samples as f64 {
            return Err(format!(
                "pulse longer than {} samples",
                self.max_pulse_samples
            ));
        }
        let points = request
            .sweepers
            .iter()
            .try_fold(1u64, |acc, s| acc.checked_mul(s.expts as u64))
            .unwrap_or(u64::MAX);
        let shots = request.cfg.reps.saturating_mul(request.cfg.soft_avgs);
        if points.saturating_mul(shots) > self.max_total_shots {
            return Err(format!("more than {} shots in total", self.max_total_shots));
        }
        let per_point = match (request.operation_code, request.cfg.average) {
            (OperationCode::ExecutePulseSequenceRaw, _) => {
                (longest * profile.adc_rate).ceil() as u64 + 1
            }
            (_, true) => 1,
            (_, false) => request.cfg.reps,
        };
        let values = (request.readout_count() as u64)
            .saturating_mul(points)
            .saturating_mul(per_point);
        if values > self.max_result_values {
            return Err(format!(
                "more than {} result values",
                self.max_result_values
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid bind address {0}: port must be in 1..65535")]
    InvalidPort(String),
    #[error("cannot resolve bind address {addr}: {source}")]
    Resolve { addr: String, source: io::Error },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("listener failed: {0}")]
    Io(#[from] io::Error),
}

/// One executed (or rejected) request, as written to the log.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub peer: Option<SocketAddr>,
    pub operation: Option<OperationCode>,
    pub points: usize,
    pub started: Instant,
    pub finished: Instant,
    /// Simulated qubit time of this request, seconds.
    pub hardware_time: f64,
    pub program_loads: u64,
    /// Hardware time plus connection and program-load overheads.
    pub simulated_wall: f64,
    /// `None` on success, else the error message sent back.
    pub error: Option<String>,
}

/// Shared view of the request log, readable while the server runs.
#[derive(Debug, Clone, Default)]
pub struct Journal(Arc<Mutex<Vec<RequestRecord>>>);

impl Journal {
    pub fn records(&self) -> MutexGuard<'_, Vec<RequestRecord>> {
        self.0
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn push(&self, record: RequestRecord) {
        self.records().push(record);
    }
}

/// The per-operation executors, behind a trait so dispatch can be observed.
pub trait Executors {
    fn sequence(
        &mut self,
        schedule: &Schedule,
        request: &ExperimentRequest,
        backend: &mut BackendState,
    ) -> Result<AcquisitionResult, ProgramError>;
    fn raw(
        &mut self,
        schedule: &Schedule,
        request: &ExperimentRequest,
        backend: &mut BackendState,
    ) -> Result<AcquisitionResult, ProgramError>;
    fn sweeps(
        &mut self,
        schedule: &Schedule,
        request: &ExperimentRequest,
        backend: &mut BackendState,
    ) -> Result<AcquisitionResult, ProgramError>;
}

/// The executors of [`crate::programs`].
#[derive(Debug, Default, Clone, Copy)]
pub struct Programs;

impl Executors for Programs {
    fn sequence(
        &mut self,
        schedule: &Schedule,
        request: &ExperimentRequest,
        backend: &mut BackendState,
    ) -> Result<AcquisitionResult, ProgramError> {
        programs::execute_sequence(schedule, &request.cfg, backend)
    }

    fn raw(
        &mut self,
        schedule: &Schedule,
        request: &ExperimentRequest,
        backend: &mut BackendState,
    ) -> Result<AcquisitionResult, ProgramError> {
        programs::execute_raw(schedule, &request.cfg, backend)
    }

    fn sweeps(
        &mut self,
        schedule: &Schedule,
        request: &ExperimentRequest,
        backend: &mut BackendState,
    ) -> Result<AcquisitionResult, ProgramError> {
        programs::execute_sweeps(request, schedule, backend)
    }
}

/// Routes a validated request to the executor for its operation code.
pub fn dispatch(
    request: &ExperimentRequest,
    backend: &mut BackendState,
) -> Result<AcquisitionResult, ProgramError> {
    dispatch_with(&mut Programs, request, backend)
}

pub fn dispatch_with<E: Executors>(
    executors: &mut E,
    request: &ExperimentRequest,
    backend: &mut BackendState,
) -> Result<AcquisitionResult, ProgramError> {
    match (request.operation_code, request.sweepers.is_empty()) {
        (OperationCode::ExecuteSweeps, true) => return Err(ProgramError::MissingSweepers),
        (OperationCode::ExecuteSweeps, false) => {}
        (_, false) => return Err(ProgramError::UnexpectedSweepers),
        (_, true) => {}
    }
    let schedule = compile(request, backend.profile())?;
    match request.operation_code {
        OperationCode::ExecutePulseSequence => executors.sequence(&schedule, request, backend),
        OperationCode::ExecutePulseSequenceRaw => executors.raw(&schedule, request, backend),
        OperationCode::ExecuteSweeps => executors.sweeps(&schedule, request, backend),
    }
}

/// Decodes, validates and executes one request payload. Never panics
/// outward; every failure becomes an error envelope.
pub fn process_payload(
    payload: &[u8],
    backend: &mut BackendState,
    limits: &ExecutionLimits,
) -> (ResponseEnvelope, Option<ExperimentRequest>) {
    let request = match wire::decode_request(payload) {
        Ok(r) => r,
        Err(e) => {
            return (
                ResponseEnvelope::Error(format!("malformed request: {e}")),
                None,
            )
        }
    };
    let violations = validate_request(&request, backend.profile());
    if !violations.is_empty() {
        let message = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return (ResponseEnvelope::Error(message), Some(request));
    }
    if let Err(reason) = limits.check(&request, backend.profile()) {
        return (
            ResponseEnvelope::Error(format!("request exceeds server limits: {reason}")),
            Some(request),
        );
    }
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| dispatch(&request, backend)));
    let envelope = match outcome {
        Ok(Ok(result)) => ResponseEnvelope::Ok(result),
        Ok(Err(e)) => ResponseEnvelope::Error(match e {
            ProgramError::Unsupported(_)
            | ProgramError::MissingSweepers
            | ProgramError::UnexpectedSweepers => e.to_string(),
            other => format!("execution failed: {other}"),
        }),
        Err(_) => {
            log::error!("executor panicked; request dropped");
            ResponseEnvelope::Error("execution failed: internal error".into())
        }
    };
    (envelope, Some(request))
}

/// Serves one connection: read a frame, execute, reply, close.
pub fn handle_connection<S: Read + Write>(
    stream: &mut S,
    backend: &mut BackendState,
    limits: &ExecutionLimits,
) -> (Option<ExperimentRequest>, ResponseEnvelope) {
    let (envelope, request) = match wire::frame_read_limited(stream, limits.max_frame_bytes) {
        Ok(payload) => process_payload(&payload, backend, limits),
        Err(FrameError::Io(e))
            if matches!(
                e.kind(),
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
            ) =>
        {
            (ResponseEnvelope::Error("read timeout".into()), None)
        }
        Err(e) => (ResponseEnvelope::Error(e.to_string()), None),
    };
    let bytes = wire::encode_results(&envelope).unwrap_or_else(|e| {
        wire::encode_results(&ResponseEnvelope::Error(format!("execution failed: {e}")))
            .expect("error envelopes always encode")
    });
    if let Err(e) = wire::write_frame(stream, &bytes) {
        log::warn!("response not delivered: {e}");
    }
    (request, envelope)
}

pub struct Server {
    listener: TcpListener,
    backend: BackendState,
    journal: Journal,
    config: ServerConfig,
}

fn resolve(bind: &str) -> Result<SocketAddr, ServerError> {
    let addr = bind
        .to_socket_addrs()
        .map_err(|source| ServerError::Resolve {
            addr: bind.into(),
            source,
        })?
        .next()
        .ok_or_else(|| ServerError::Resolve {
            addr: bind.into(),
            source: io::Error::new(io::ErrorKind::NotFound, "no address"),
        })?;
    if addr.port() == 0 {
        return Err(ServerError::InvalidPort(bind.into()));
    }
    Ok(addr)
}

/// Builds the backend described by `config`.
pub fn backend_for(config: &ServerConfig) -> Result<BackendState, ServerError> {
    let model = match &config.model {
        Some(path) => QubitModel::load(path)?,
        None => QubitModel::default(),
    };
    let seed = config.seed.unwrap_or_else(rand::random);
    Ok(init_backend(
        model,
        BoardProfile::for_board(config.board),
        seed,
        config.overheads,
    ))
}

impl Server {
    /// Binds the configured address and initializes the backend. Port 0 is
    /// refused.
    pub fn bind(config: ServerConfig) -> Result<Self, ServerError> {
        let addr = resolve(&config.bind)?;
        let backend = backend_for(&config)?;
        let listener = TcpListener::bind(addr).map_err(|source| ServerError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
        Ok(Self::with_listener(listener, backend, config))
    }

    /// Serves on an existing listener, e.g. one bound to an ephemeral port.
    pub fn with_listener(
        listener: TcpListener,
        backend: BackendState,
        config: ServerConfig,
    ) -> Self {
        Self {
            listener,
            backend,
            journal: Journal::default(),
            config,
        }
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn journal(&self) -> Journal {
        self.journal.clone()
    }

    pub fn backend(&self) -> &BackendState {
        &self.backend
    }

    /// Accepts and serves connections until the process ends.
    pub fn serve(mut self) -> io::Result<()> {
        let stop = AtomicBool::new(false);
        self.serve_until(&stop)
    }

    fn serve_until(&mut self, stop: &AtomicBool) -> io::Result<()> {
        log::info!(
            "serving on {} board={} clock_phase={:.6}",
            self.listener.local_addr()?,
            self.backend.profile().name,
            self.backend.clock_phase()
        );
        loop {
            let stream = self.listener.accept().map(|(s, _)| s);
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(stream) => self.serve_connection(stream),
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        Ok(())
    }

    fn serve_connection(&mut self, mut stream: TcpStream) {
        let peer = stream.peer_addr().ok();
        if let Err(e) = stream.set_read_timeout(Some(self.config.read_timeout)) {
            log::warn!("cannot set read timeout: {e}");
        }
        let started = Instant::now();
        let loads_before = self.backend.program_loads();
        let hw_before = self.backend.hardware_time();

        let (request, envelope) =
            handle_connection(&mut stream, &mut self.backend, &self.config.limits);
        let _ = stream.shutdown(Shutdown::Both);

        let program_loads = self.backend.program_loads() - loads_before;
        let hardware_time = self.backend.hardware_time() - hw_before;
        let simulated_wall =
            simulated_wall_time(program_loads, 1, hardware_time, self.backend.overheads());
        let record = RequestRecord {
            peer,
            operation: request.as_ref().map(|r| r.operation_code),
            points: request.as_ref().map_or(0, ExperimentRequest::point_count),
            started,
            finished: Instant::now(),
            hardware_time,
            program_loads,
            simulated_wall,
            error: match envelope {
                ResponseEnvelope::Ok(_) => None,
                ResponseEnvelope::Error(m) => Some(m),
            },
        };
        log::info!(
            "op={} points={} hw_time={:.9} sim_wall={:.9} elapsed={:.6} status={}",
            record.operation.map_or("-", OperationCode::wire_name),
            record.points,
            record.hardware_time,
            record.simulated_wall,
            (record.finished - record.started).as_secs_f64(),
            record.error.as_deref().unwrap_or("ok"),
        );
        self.journal.push(record);
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(mut self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let journal = self.journal();
        let clock_phase = self.backend.clock_phase();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            if let Err(e) = self.serve_until(&flag) {
                log::error!("server stopped: {e}");
            }
        });
        Ok(ServerHandle {
            addr,
            journal,
            clock_phase,
            stop,
            thread: Some(thread),
        })
    }
}

/// Owner of a server running on a background thread. Dropping it stops the
/// server after the connection in progress.
pub struct ServerHandle {
    addr: SocketAddr,
    journal: Journal,
    clock_phase: f64,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    /// Clock phase of the backend this server owns.
    pub fn clock_phase(&self) -> f64 {
        self.clock_phase
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(thread) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds, initializes and serves until terminated.
pub fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let server = Server::bind(config)?;
    server.serve()?;
    Ok(())
}
