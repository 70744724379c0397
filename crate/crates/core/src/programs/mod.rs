//! Compilation of requests into schedules and the three execution modes.

mod schedule;

use thiserror::Error;

use crate::backend::BackendState;
use crate::components::{
    sweep_grid, AcquisitionResult, Config, ExperimentRequest, Parameter, ParameterUpdate,
    PulseKind, Violation,
};

pub use schedule::{
    compile, compile_cached, Acquisition, CompileError, EnvelopeCache, Schedule, ScheduledEvent,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("compile error: {0}")]
    Compile(#[from] CompileError),
    #[error("sweep point {index}: {source}")]
    SweepPoint { index: usize, source: CompileError },
    #[error("{0}")]
    Unsupported(Violation),
    #[error("sweeps operation requires sweepers")]
    MissingSweepers,
    #[error("sequence operation takes no sweepers")]
    UnexpectedSweepers,
    #[error("sweeper {sweeper}: index {index} out of range")]
    SweepIndex { sweeper: usize, index: usize },
    #[error("raw acquisition needs equal window lengths for all readouts")]
    UnequalRawWindows,
}

/// Pure rewrite of the targeted pulse or qubit fields.
pub fn apply_assignment(
    request: &ExperimentRequest,
    assignment: &[ParameterUpdate],
) -> ExperimentRequest {
    let mut out = request.clone();
    for update in assignment {
        if update.parameter == Parameter::Bias {
            out.qubits[update.index].bias = Some(update.value);
            continue;
        }
        let pulse = &mut out.sequence[update.index];
        match update.parameter {
            Parameter::Frequency => pulse.frequency = update.value,
            Parameter::Amplitude => pulse.amplitude = update.value,
            Parameter::RelativePhase => pulse.relative_phase = update.value,
            Parameter::Start => pulse.start = update.value,
            Parameter::Duration => pulse.duration = update.value,
            Parameter::Bias => unreachable!(),
        }
    }
    out
}

/// Rejects parameters that cannot be swept in real time: duration, and
/// frequency of anything but a drive pulse.
pub fn check_realtime_support(request: &ExperimentRequest) -> Result<(), ProgramError> {
    for (s, sweeper) in request.sweepers.iter().enumerate() {
        for (&parameter, &index) in sweeper.parameters.iter().zip(&sweeper.indexes) {
            if parameter == Parameter::Duration {
                return Err(ProgramError::Unsupported(
                    Violation::UnsupportedSweeperParameter {
                        parameter,
                        target: None,
                    },
                ));
            }
            let in_bounds = if parameter.targets_qubit() {
                index < request.qubits.len()
            } else {
                index < request.sequence.len()
            };
            if !in_bounds {
                return Err(ProgramError::SweepIndex { sweeper: s, index });
            }
            if parameter == Parameter::Frequency {
                let target = match request.sequence[index].kind {
                    PulseKind::Drive => continue,
                    PulseKind::Readout => "readout",
                    PulseKind::Flux => "flux",
                };
                return Err(ProgramError::Unsupported(
                    Violation::UnsupportedSweeperParameter {
                        parameter,
                        target: Some(target),
                    },
                ));
            }
        }
    }
    Ok(())
}

/// Accumulates shots either as running sums or as the full record.
struct Collector {
    average: bool,
    shots: u64,
    i: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
}

impl Collector {
    fn new(readouts: usize, cfg: &Config) -> Self {
        Self {
            average: cfg.average,
            shots: cfg.shots(),
            i: vec![Vec::new(); readouts],
            q: vec![Vec::new(); readouts],
        }
    }

    /// Runs one point's worth of shots.
    fn run_point(&mut self, backend: &mut BackendState, schedule: &Schedule, cfg: &Config) {
        let plan = backend.plan(schedule);
        let readouts = self.i.len();
        let mut sums = vec![(0.0, 0.0); readouts];
        let mut out = Vec::with_capacity(readouts);
        for _ in 0..self.shots {
            backend.run_planned_shot(&plan, &mut out);
            for (k, &(i, q)) in out.iter().enumerate() {
                if self.average {
                    sums[k].0 += i;
                    sums[k].1 += q;
                } else {
                    self.i[k].push(i);
                    self.q[k].push(q);
                }
            }
        }
        if self.average {
            let n = self.shots as f64;
            for (k, (si, sq)) in sums.into_iter().enumerate() {
                self.i[k].push(si / n);
                self.q[k].push(sq / n);
            }
        }
        backend.record_shots(self.shots, schedule.duration, cfg.repetition_duration);
    }

    fn finish(self, point_shape: &[usize]) -> AcquisitionResult {
        let mut shape = vec![self.i.len()];
        shape.extend_from_slice(point_shape);
        if !self.average {
            shape.push(self.shots as usize);
        }
        AcquisitionResult::new(shape, self.i.concat(), self.q.concat())
    }
}

/// Fixed sequence: `reps * soft_avgs` shots, one integrated point per
/// readout per shot. Averaged results have shape `[R]`, singleshot `[R, reps]`.
pub fn execute_sequence(
    schedule: &Schedule,
    cfg: &Config,
    backend: &mut BackendState,
) -> Result<AcquisitionResult, ProgramError> {
    backend.record_program_load();
    let mut collector = Collector::new(schedule.acquisitions.len(), cfg);
    collector.run_point(backend, schedule, cfg);
    Ok(collector.finish(&[]))
}

/// Demodulated time series per readout, averaged over shots: `[R, window]`.
pub fn execute_raw(
    schedule: &Schedule,
    cfg: &Config,
    backend: &mut BackendState,
) -> Result<AcquisitionResult, ProgramError> {
    let window = schedule.acquisitions.first().map_or(0, |a| a.length);
    if schedule.acquisitions.iter().any(|a| a.length != window) {
        return Err(ProgramError::UnequalRawWindows);
    }
    backend.record_program_load();
    let series = backend.acquire_raw(schedule, cfg);
    backend.record_shots(cfg.shots(), schedule.duration, cfg.repetition_duration);
    let shape = vec![series.len(), window as usize];
    let (i, q): (Vec<Vec<f64>>, Vec<Vec<f64>>) = series.into_iter().unzip();
    Ok(AcquisitionResult::new(shape, i.concat(), q.concat()))
}

/// Real-time sweep over the Cartesian grid of `request.sweepers`.
///
/// One program load for the whole grid. Per point, only the swept fields
/// change and only envelopes whose inputs changed are re-synthesized.
/// Averaged results have shape `[R, P]` with the first sweeper outermost;
/// singleshot results `[R, P, reps]`.
pub fn execute_sweeps(
    request: &ExperimentRequest,
    schedule: &Schedule,
    backend: &mut BackendState,
) -> Result<AcquisitionResult, ProgramError> {
    if request.sweepers.is_empty() {
        return Err(ProgramError::MissingSweepers);
    }
    check_realtime_support(request)?;

    let grid = sweep_grid(&request.sweepers);
    let mut cache = EnvelopeCache::primed(request, schedule);
    let profile = backend.profile().clone();
    let cfg = &request.cfg;

    backend.record_program_load();
    let mut collector = Collector::new(schedule.acquisitions.len(), cfg);
    for (index, assignment) in grid.assignments.iter().enumerate() {
        let point = apply_assignment(request, assignment);
        let compiled = compile_cached(&point, &profile, &mut cache)
            .map_err(|source| ProgramError::SweepPoint { index, source })?;
        collector.run_point(backend, &compiled, cfg);
    }

    Ok(collector.finish(&[grid.len()]))
}
