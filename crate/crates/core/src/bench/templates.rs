//! Request builders for the standard single-qubit calibration routines and
//! the analysis that reads a calibrated quantity off each dataset.
//!
//! Routines whose swept parameter has no real-time support (readout
//! frequency, pulse duration) and the detuned Ramsey routine run as one
//! connection per point. The others are one real-time sweep.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::fit::{fit_model, FitError, FitKind, FitResult};
use super::{ideal_time, BenchError, Endpoint};
use crate::backend::{classify, Discriminator, QubitModel};
use crate::components::{
    sweep_grid, sweeper_values, Config, ExperimentRequest, OperationCode, Parameter, Pulse,
    PulseKind, PulseShape, Qubit, Sweeper,
};
use crate::programs::apply_assignment;

const DRIVE_DAC: usize = 0;
const READOUT_DAC: usize = 1;
const READOUT_ADC: usize = 0;
const FLUX_DAC: usize = 2;
const READOUT_DURATION: f64 = 1e-6;
const READOUT_AMPLITUDE: f64 = 0.1;
const SPECTROSCOPY_RELAXATION: f64 = 5e-6;
const DEFAULT_RELAXATION: f64 = 300e-6;
const QUBIT_SPAN: f64 = 20e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    ResonatorSpectroscopy,
    QubitSpectroscopy,
    RabiAmplitude,
    RabiLength,
    T1,
    RamseyDetuned,
    Singleshot,
    FluxMap,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::ResonatorSpectroscopy,
        ExperimentKind::QubitSpectroscopy,
        ExperimentKind::RabiAmplitude,
        ExperimentKind::RabiLength,
        ExperimentKind::T1,
        ExperimentKind::RamseyDetuned,
        ExperimentKind::Singleshot,
        ExperimentKind::FluxMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ResonatorSpectroscopy => "ResonatorSpectroscopy",
            ExperimentKind::QubitSpectroscopy => "QubitSpectroscopy",
            ExperimentKind::RabiAmplitude => "RabiAmplitude",
            ExperimentKind::RabiLength => "RabiLength",
            ExperimentKind::T1 => "T1",
            ExperimentKind::RamseyDetuned => "RamseyDetuned",
            ExperimentKind::Singleshot => "Singleshot",
            ExperimentKind::FluxMap => "FluxMap",
        }
    }

    /// Whether the routine is one real-time sweep rather than a client loop.
    pub fn is_realtime(self) -> bool {
        matches!(
            self,
            ExperimentKind::QubitSpectroscopy
                | ExperimentKind::RabiAmplitude
                | ExperimentKind::T1
                | ExperimentKind::FluxMap
        )
    }

    pub fn default_relaxation(self) -> f64 {
        match self {
            ExperimentKind::ResonatorSpectroscopy
            | ExperimentKind::QubitSpectroscopy
            | ExperimentKind::FluxMap => SPECTROSCOPY_RELAXATION,
            _ => DEFAULT_RELAXATION,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    /// Accepts the type name in any case, with or without `_` or `-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .ok_or_else(|| format!("unknown experiment kind {s:?}"))
    }
}

/// What the experimenter knows about the qubit before calibrating it.
#[derive(Debug, Clone, PartialEq)]
pub struct Runcard {
    pub resonator_frequency: f64,
    pub resonator_linewidth: f64,
    /// Readout tone between the two dressed resonator frequencies.
    pub readout_frequency: f64,
    pub drive_frequency: f64,
    pub qubit_frequency_max: f64,
    pub pi_amplitude: f64,
    pub pi_duration: f64,
    pub t1: f64,
    pub t2: f64,
    pub bias: f64,
    pub flux_offset: f64,
    pub flux_period: f64,
}

impl Runcard {
    /// Runcard matching `model` operated at flux `bias`.
    pub fn from_model(model: &QubitModel, bias: f64) -> Self {
        Self {
            resonator_frequency: model.resonator_frequency,
            resonator_linewidth: model.resonator_linewidth,
            readout_frequency: model.resonator_frequency + model.dispersive_shift / 2.0,
            drive_frequency: model.qubit_frequency(bias),
            qubit_frequency_max: model.qubit_frequency_max,
            pi_amplitude: model.pi_amplitude,
            pi_duration: model.reference_duration,
            t1: model.t1,
            t2: model.t2,
            bias,
            flux_offset: model.flux_offset,
            flux_period: model.flux_period,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentParams {
    pub points: usize,
    pub shots: u64,
    /// Seconds between shots; the routine default when absent.
    pub relaxation: Option<f64>,
    /// Center of the qubit spectroscopy scan; the runcard drive frequency
    /// when absent.
    pub drive_center: Option<f64>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            points: 101,
            shots: 4096,
            relaxation: None,
            drive_center: None,
        }
    }
}

/// A named sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: &'static str,
    pub values: Vec<f64>,
}

/// Costs of a plan in the units of the overhead model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accounting {
    pub requests: u64,
    pub connections: u64,
    pub program_loads: u64,
    /// Qubit time summed over requests and points.
    pub ideal_s: f64,
}

/// The requests realizing one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    /// Outer axis first; the data of the experiment follow this grid.
    pub axes: Vec<Axis>,
    pub requests: Vec<ExperimentRequest>,
}

impl ExperimentPlan {
    /// One connection and one program load per request; ideal time from
    /// the sequence duration at every point of every request.
    pub fn accounting(&self) -> Accounting {
        let mut ideal_s = 0.0;
        for request in &self.requests {
            let durations: Vec<f64> = if request.sweepers.is_empty() {
                vec![request.sequence_duration()]
            } else {
                sweep_grid(&request.sweepers)
                    .assignments
                    .iter()
                    .map(|a| apply_assignment(request, a).sequence_duration())
                    .collect()
            };
            ideal_s += ideal_time(
                request.cfg.shots(),
                &durations,
                request.cfg.repetition_duration,
            );
        }
        let n = self.requests.len() as u64;
        Accounting {
            requests: n,
            connections: n,
            program_loads: n,
            ideal_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: ExperimentKind,
    pub axes: Vec<Axis>,
    /// Row-major over `axes`.
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub accounting: Accounting,
}

impl Dataset {
    pub fn magnitude(&self) -> Vec<f64> {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(i, q)| i.hypot(*q))
            .collect()
    }

    /// Distance of every point from the median point. Independent of the
    /// clock phase, and proportional to the excited population when most
    /// points sit in the ground state.
    pub fn deviation(&self) -> Vec<f64> {
        let (ci, cq) = (median(&self.i), median(&self.q));
        self.i
            .iter()
            .zip(&self.q)
            .map(|(i, q)| (i - ci).hypot(q - cq))
            .collect()
    }

    /// Projection on the principal axis of the IQ cloud.
    pub fn projection(&self) -> Vec<f64> {
        let n = self.i.len().max(1) as f64;
        let mi = self.i.iter().sum::<f64>() / n;
        let mq = self.q.iter().sum::<f64>() / n;
        let (mut sii, mut sqq, mut siq) = (0.0, 0.0, 0.0);
        for (i, q) in self.i.iter().zip(&self.q) {
            sii += (i - mi) * (i - mi);
            sqq += (q - mq) * (q - mq);
            siq += (i - mi) * (q - mq);
        }
        let angle = 0.5 * (2.0 * siq).atan2(sii - sqq);
        let (s, c) = angle.sin_cos();
        self.i
            .iter()
            .zip(&self.q)
            .map(|(i, q)| (i - mi) * c + (q - mq) * s)
            .collect()
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn drive(amplitude: f64, start: f64, duration: f64, frequency: f64, name: &str) -> Pulse {
    Pulse {
        kind: PulseKind::Drive,
        shape: PulseShape::Rectangular,
        frequency,
        amplitude,
        relative_phase: 0.0,
        start,
        duration,
        dac: DRIVE_DAC,
        adc: None,
        name: name.into(),
    }
}

fn readout(start: f64, frequency: f64) -> Pulse {
    Pulse {
        kind: PulseKind::Readout,
        shape: PulseShape::Rectangular,
        frequency,
        amplitude: READOUT_AMPLITUDE,
        relative_phase: 0.0,
        start,
        duration: READOUT_DURATION,
        dac: READOUT_DAC,
        adc: Some(READOUT_ADC),
        name: "readout".into(),
    }
}

fn request(
    sequence: Vec<Pulse>,
    bias: f64,
    shots: u64,
    relaxation: f64,
    average: bool,
) -> ExperimentRequest {
    ExperimentRequest {
        operation_code: OperationCode::ExecutePulseSequence,
        cfg: Config {
            reps: shots,
            soft_avgs: 1,
            repetition_duration: relaxation,
            average,
        },
        sequence,
        qubits: vec![Qubit {
            bias: Some(bias),
            dac: Some(FLUX_DAC),
        }],
        sweepers: vec![],
    }
}

fn swept(mut base: ExperimentRequest, sweepers: Vec<Sweeper>) -> ExperimentRequest {
    base.operation_code = OperationCode::ExecuteSweeps;
    // the base request carries the first grid point
    let first = sweep_grid(&sweepers).assignments.swap_remove(0);
    base = apply_assignment(&base, &first);
    base.sweepers = sweepers;
    base
}

fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    sweeper_values(&Sweeper::single(
        Parameter::Amplitude,
        0,
        start,
        stop,
        points,
    ))
    .remove(0)
}

/// Largest divisor of `n` not above its square root.
fn grid_split(n: usize) -> (usize, usize) {
    let mut outer = (n as f64).sqrt() as usize;
    while outer > 1 && !n.is_multiple_of(outer) {
        outer -= 1;
    }
    let outer = outer.max(1);
    (outer, n / outer)
}

/// Expands `kind` into requests.
pub fn build_plan(
    kind: ExperimentKind,
    card: &Runcard,
    params: &ExperimentParams,
) -> Result<ExperimentPlan, BenchError> {
    let n = params.points;
    if n == 0 {
        return Err(BenchError::Parameters("points must be at least 1".into()));
    }
    if params.shots == 0 {
        return Err(BenchError::Parameters("shots must be at least 1".into()));
    }
    let relax = params.relaxation.unwrap_or(kind.default_relaxation());
    let shots = params.shots;
    let bias = card.bias;
    let pi = card.pi_duration;
    let ro = card.readout_frequency;
    let one = |sequence| request(sequence, bias, shots, relax, true);

    let (axes, requests) = match kind {
        ExperimentKind::ResonatorSpectroscopy => {
            let span = 3.0 * card.resonator_linewidth;
            let freqs = linspace(
                card.resonator_frequency - span,
                card.resonator_frequency + span,
                n,
            );
            let requests = freqs.iter().map(|&f| one(vec![readout(0.0, f)])).collect();
            (
                vec![Axis {
                    name: "readout_frequency",
                    values: freqs,
                }],
                requests,
            )
        }
        ExperimentKind::QubitSpectroscopy => {
            let center = params.drive_center.unwrap_or(card.drive_frequency);
            let duration = 2.0 * pi;
            let base = one(vec![
                drive(card.pi_amplitude / 2.0, 0.0, duration, center, "drive"),
                readout(duration, ro),
            ]);
            let sweeper = Sweeper::single(
                Parameter::Frequency,
                0,
                center - QUBIT_SPAN,
                center + QUBIT_SPAN,
                n,
            );
            let values = sweeper_values(&sweeper).remove(0);
            (
                vec![Axis {
                    name: "drive_frequency",
                    values,
                }],
                vec![swept(base, vec![sweeper])],
            )
        }
        ExperimentKind::RabiAmplitude => {
            let base = one(vec![
                drive(0.0, 0.0, pi, card.drive_frequency, "drive"),
                readout(pi, ro),
            ]);
            let top = (2.0 * card.pi_amplitude).min(1.0);
            let sweeper = Sweeper::single(Parameter::Amplitude, 0, 0.0, top, n);
            let values = sweeper_values(&sweeper).remove(0);
            (
                vec![Axis {
                    name: "amplitude",
                    values,
                }],
                vec![swept(base, vec![sweeper])],
            )
        }
        ExperimentKind::RabiLength => {
            let durations = linspace(pi / 10.0, 4.0 * pi, n);
            let requests = durations
                .iter()
                .map(|&d| {
                    one(vec![
                        drive(card.pi_amplitude, 0.0, d, card.drive_frequency, "drive"),
                        readout(d, ro),
                    ])
                })
                .collect();
            (
                vec![Axis {
                    name: "duration",
                    values: durations,
                }],
                requests,
            )
        }
        ExperimentKind::T1 => {
            let base = one(vec![
                drive(card.pi_amplitude, 0.0, pi, card.drive_frequency, "pi"),
                readout(pi, ro),
            ]);
            let sweeper = Sweeper::single(Parameter::Start, 1, pi, pi + 5.0 * card.t1, n);
            let delays = sweeper_values(&sweeper)
                .remove(0)
                .into_iter()
                .map(|s| s - pi)
                .collect();
            (
                vec![Axis {
                    name: "delay",
                    values: delays,
                }],
                vec![swept(base, vec![sweeper])],
            )
        }
        ExperimentKind::RamseyDetuned => {
            let span = card.t2;
            let detuning = 5.0 / span;
            let delays = linspace(0.0, span, n);
            let requests = delays
                .iter()
                .map(|&tau| {
                    let first = drive(
                        card.pi_amplitude / 2.0,
                        0.0,
                        pi,
                        card.drive_frequency,
                        "x90",
                    );
                    let mut second = drive(
                        card.pi_amplitude / 2.0,
                        pi + tau,
                        pi,
                        card.drive_frequency,
                        "x90_2",
                    );
                    second.relative_phase = (TAU * detuning * tau).rem_euclid(TAU);
                    one(vec![first, second, readout(2.0 * pi + tau, ro)])
                })
                .collect();
            (
                vec![Axis {
                    name: "delay",
                    values: delays,
                }],
                requests,
            )
        }
        ExperimentKind::Singleshot => {
            let ground = request(vec![readout(pi, ro)], bias, shots, relax, false);
            let excited = request(
                vec![
                    drive(card.pi_amplitude, 0.0, pi, card.drive_frequency, "pi"),
                    readout(pi, ro),
                ],
                bias,
                shots,
                relax,
                false,
            );
            let axes = vec![
                Axis {
                    name: "prepared_state",
                    values: vec![0.0, 1.0],
                },
                Axis {
                    name: "shot",
                    values: (0..shots).map(|k| k as f64).collect(),
                },
            ];
            (axes, vec![ground, excited])
        }
        ExperimentKind::FluxMap => {
            let (n_bias, n_freq) = grid_split(n);
            let bias_hi = bias + 0.1 * card.flux_period;
            let model_at = |b: f64| {
                let phase = PI * (b - card.flux_offset) / card.flux_period;
                card.qubit_frequency_max * phase.cos().abs().sqrt()
            };
            let (f_a, f_b) = (model_at(bias), model_at(bias_hi));
            let f_lo = f_a.min(f_b) - QUBIT_SPAN;
            let f_hi = f_a.max(f_b) + QUBIT_SPAN;
            let duration = 2.0 * pi;
            let base = one(vec![
                drive(card.pi_amplitude / 2.0, 0.0, duration, f_lo, "drive"),
                readout(duration, ro),
            ]);
            let outer = Sweeper::single(Parameter::Bias, 0, bias, bias_hi, n_bias);
            let inner = Sweeper::single(Parameter::Frequency, 0, f_lo, f_hi, n_freq);
            let axes = vec![
                Axis {
                    name: "bias",
                    values: sweeper_values(&outer).remove(0),
                },
                Axis {
                    name: "drive_frequency",
                    values: sweeper_values(&inner).remove(0),
                },
            ];
            (axes, vec![swept(base, vec![outer, inner])])
        }
    };
    Ok(ExperimentPlan {
        kind,
        axes,
        requests,
    })
}

/// Executes every request of `plan` in order and assembles the dataset.
pub fn run_plan<E: Endpoint>(
    plan: &ExperimentPlan,
    endpoint: &mut E,
) -> Result<Dataset, BenchError> {
    let mut i = Vec::new();
    let mut q = Vec::new();
    for (index, request) in plan.requests.iter().enumerate() {
        let result = endpoint
            .execute(request)
            .map_err(|source| BenchError::Request { index, source })?;
        if result.shape().first() != Some(&1) {
            return Err(BenchError::Shape {
                index,
                shape: result.shape().to_vec(),
            });
        }
        let (ri, rq) = result.readout(0);
        i.extend_from_slice(ri);
        q.extend_from_slice(rq);
    }
    let expected: usize = plan.axes.iter().map(|a| a.values.len()).product();
    if i.len() != expected {
        return Err(BenchError::Shape {
            index: plan.requests.len().saturating_sub(1),
            shape: vec![i.len()],
        });
    }
    Ok(Dataset {
        kind: plan.kind,
        axes: plan.axes.clone(),
        i,
        q,
        accounting: plan.accounting(),
    })
}

/// Builds and runs `kind`.
pub fn run_experiment<E: Endpoint>(
    kind: ExperimentKind,
    endpoint: &mut E,
    card: &Runcard,
    params: &ExperimentParams,
) -> Result<Dataset, BenchError> {
    run_plan(&build_plan(kind, card, params)?, endpoint)
}

/// A calibrated quantity read off a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub name: &'static str,
    pub value: f64,
    pub fit: Option<FitResult>,
}

fn fitted(kind: FitKind, xs: &[f64], ys: &[f64]) -> Result<FitResult, BenchError> {
    fit_model(kind, xs, ys).map_err(|e| match e {
        FitError::NoConvergence { best } => {
            BenchError::Analysis(format!("fit did not converge (best {:?})", best.params))
        }
        other => BenchError::Analysis(other.to_string()),
    })
}

/// Reads the calibrated quantity of the routine off `data`, when it has one.
pub fn analyze(data: &Dataset) -> Result<Option<Estimate>, BenchError> {
    let x = &data.axes[0].values;
    let estimate = match data.kind {
        ExperimentKind::ResonatorSpectroscopy => {
            let fit = fitted(FitKind::Lorentzian, x, &data.magnitude())?;
            Estimate {
                name: "resonator_frequency",
                value: fit.params[0],
                fit: Some(fit),
            }
        }
        ExperimentKind::QubitSpectroscopy => {
            let fit = fitted(FitKind::Lorentzian, x, &data.deviation())?;
            Estimate {
                name: "qubit_frequency",
                value: fit.params[0],
                fit: Some(fit),
            }
        }
        ExperimentKind::RabiAmplitude | ExperimentKind::RabiLength => {
            let fit = fitted(FitKind::Sinusoid, x, &data.projection())?;
            let half_period = 1.0 / (2.0 * fit.params[1]);
            Estimate {
                name: if data.kind == ExperimentKind::RabiAmplitude {
                    "pi_amplitude"
                } else {
                    "pi_duration"
                },
                value: half_period,
                fit: Some(fit),
            }
        }
        ExperimentKind::T1 => {
            let fit = fitted(FitKind::ExponentialDecay, x, &data.projection())?;
            Estimate {
                name: "t1",
                value: fit.params[1],
                fit: Some(fit),
            }
        }
        ExperimentKind::Singleshot => Estimate {
            name: "assignment_fidelity",
            value: assignment_fidelity(data),
            fit: None,
        },
        ExperimentKind::RamseyDetuned | ExperimentKind::FluxMap => return Ok(None),
    };
    Ok(Some(estimate))
}

/// `1 - (P(1|0) + P(0|1)) / 2` with the discriminator fitted to the two
/// prepared sets.
fn assignment_fidelity(data: &Dataset) -> f64 {
    let half = data.i.len() / 2;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ground = (mean(&data.i[..half]), mean(&data.q[..half]));
    let excited = (mean(&data.i[half..]), mean(&data.q[half..]));
    let disc = Discriminator::from_centers(ground, excited);
    let wrong = |range: std::ops::Range<usize>, prepared: u8| {
        range
            .clone()
            .filter(|&k| classify(data.i[k], data.q[k], &disc) != prepared)
            .count() as f64
            / range.len() as f64
    };
    1.0 - 0.5 * (wrong(0..half, 0) + wrong(half..data.i.len(), 1))
}

/// Drive frequency of the largest response at each bias of a flux map.
pub fn flux_map_peaks(data: &Dataset) -> Vec<(f64, f64)> {
    let deviation = data.deviation();
    let freqs = &data.axes[1].values;
    data.axes[0]
        .values
        .iter()
        .enumerate()
        .map(|(row, &bias)| {
            let slice = &deviation[row * freqs.len()..(row + 1) * freqs.len()];
            let best = (0..slice.len())
                .max_by(|&a, &b| slice[a].total_cmp(&slice[b]))
                .unwrap_or(0);
            (bias, freqs[best])
        })
        .collect()
}
