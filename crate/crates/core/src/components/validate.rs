use thiserror::Error;

use super::{ExperimentRequest, OperationCode, Parameter, Pulse, PulseKind, PulseShape};
use crate::backend::BoardProfile;

/// One reason a request cannot run on a board. Violations are reported, not
/// raised: [`validate_request`] collects all of them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Violation {
    #[error("sweeps operation requires sweepers")]
    SweepsRequireSweepers,
    #[error("sequence operation takes no sweepers")]
    SequenceTakesNoSweepers,
    #[error("cfg: reps must be at least 1")]
    ZeroReps,
    #[error("cfg: soft_avgs must be at least 1")]
    ZeroSoftAvgs,
    #[error("cfg: repetition_duration must be finite and non-negative")]
    InvalidRepetitionDuration,
    #[error("cfg: singleshot acquisition cannot be software averaged (soft_avgs = {0})")]
    SoftAvgsWithoutAveraging(u64),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("sequence has no readout pulse")]
    NoReadout,
    #[error("pulse {pulse}: {field} is not finite")]
    NonFinite { pulse: usize, field: &'static str },
    #[error("pulse {0}: duration must be positive")]
    NonPositiveDuration(usize),
    #[error("pulse {0}: start must be non-negative")]
    NegativeStart(usize),
    #[error("pulse {0}: amplitude outside [-1, 1]")]
    AmplitudeOutOfRange(usize),
    #[error("pulse {0}: frequency must be non-negative")]
    NegativeFrequency(usize),
    #[error("pulse {pulse}: frequency {frequency} Hz above board maximum {maximum} Hz")]
    FrequencyAboveMaximum {
        pulse: usize,
        frequency: f64,
        maximum: f64,
    },
    #[error("pulse {0}: readout requires adc")]
    ReadoutRequiresAdc(usize),
    #[error("pulse {0}: only readout pulses take an adc")]
    AdcOnNonReadout(usize),
    #[error("pulse {0}: flux pulses must have zero frequency")]
    FluxWithCarrier(usize),
    #[error("pulse {0}: flux pulses must be rectangular")]
    FluxNotRectangular(usize),
    #[error("pulse {pulse}: invalid shape: {reason}")]
    InvalidShape { pulse: usize, reason: &'static str },
    #[error("pulse {0}: pulse shorter than two samples")]
    PulseTooShort(usize),
    #[error("pulse {pulse}: dac out of range ({dac} >= {available})")]
    DacOutOfRange {
        pulse: usize,
        dac: usize,
        available: usize,
    },
    #[error("pulse {pulse}: adc out of range ({adc} >= {available})")]
    AdcOutOfRange {
        pulse: usize,
        adc: usize,
        available: usize,
    },
    #[error("pulses {first} and {second} overlap on dac {dac}")]
    ChannelOverlap {
        dac: usize,
        first: usize,
        second: usize,
    },
    #[error("readouts {first} and {second} share adc {adc} with demodulation frequencies closer than 1/window")]
    MultiplexSpacing {
        adc: usize,
        first: usize,
        second: usize,
    },
    #[error("qubit {0}: bias requires a flux dac")]
    BiasWithoutDac(usize),
    #[error("qubit {0}: bias is not finite")]
    NonFiniteBias(usize),
    #[error("qubit {qubit}: dac out of range ({dac} >= {available})")]
    QubitDacOutOfRange {
        qubit: usize,
        dac: usize,
        available: usize,
    },
    #[error("sweeper {sweeper}: {reason}")]
    MalformedSweeper {
        sweeper: usize,
        reason: &'static str,
    },
    #[error("sweeper {sweeper}: {parameter} index {index} out of range")]
    SweeperIndexOutOfRange {
        sweeper: usize,
        parameter: Parameter,
        index: usize,
    },
    #[error("unsupported sweeper parameter: {parameter}{}", target.map(|t| format!(" on {t} pulse")).unwrap_or_default())]
    UnsupportedSweeperParameter {
        parameter: Parameter,
        target: Option<&'static str>,
    },
    #[error("sweeper {sweeper}: {parameter} sweep leaves the allowed range")]
    SweepValueOutOfRange {
        sweeper: usize,
        parameter: Parameter,
    },
    #[error("sweeper {sweeper}: bias sweep on qubit {qubit} without a flux dac")]
    BiasSweepWithoutDac { sweeper: usize, qubit: usize },
}

/// Returns every violation of the type invariants and of the board limits.
/// An empty list means the request can be compiled for `profile`.
pub fn validate_request(request: &ExperimentRequest, profile: &BoardProfile) -> Vec<Violation> {
    let mut out = Vec::new();

    match (request.operation_code, request.sweepers.is_empty()) {
        (OperationCode::ExecuteSweeps, true) => out.push(Violation::SweepsRequireSweepers),
        (OperationCode::ExecuteSweeps, false) | (_, true) => {}
        (_, false) => out.push(Violation::SequenceTakesNoSweepers),
    }

    let cfg = &request.cfg;
    if cfg.reps == 0 {
        out.push(Violation::ZeroReps);
    }
    if cfg.soft_avgs == 0 {
        out.push(Violation::ZeroSoftAvgs);
    }
    if !(cfg.repetition_duration.is_finite() && cfg.repetition_duration >= 0.0) {
        out.push(Violation::InvalidRepetitionDuration);
    }
    if !cfg.average && cfg.soft_avgs != 1 {
        out.push(Violation::SoftAvgsWithoutAveraging(cfg.soft_avgs));
    }

    if request.sequence.is_empty() {
        out.push(Violation::EmptySequence);
    } else if request.readout_count() == 0 {
        out.push(Violation::NoReadout);
    }

    for (k, pulse) in request.sequence.iter().enumerate() {
        check_pulse(k, pulse, profile, &mut out);
    }
    check_overlaps(&request.sequence, &mut out);

    for (k, qubit) in request.qubits.iter().enumerate() {
        if qubit.bias.is_some() && qubit.dac.is_none() {
            out.push(Violation::BiasWithoutDac(k));
        }
        if qubit.bias.is_some_and(|b| !b.is_finite()) {
            out.push(Violation::NonFiniteBias(k));
        }
        if let Some(dac) = qubit.dac {
            if dac >= profile.active_dacs {
                out.push(Violation::QubitDacOutOfRange {
                    qubit: k,
                    dac,
                    available: profile.active_dacs,
                });
            }
        }
    }

    check_sweepers(request, profile, &mut out);
    out
}

fn check_pulse(k: usize, pulse: &Pulse, profile: &BoardProfile, out: &mut Vec<Violation>) {
    let fields = [
        ("frequency", pulse.frequency),
        ("amplitude", pulse.amplitude),
        ("relative_phase", pulse.relative_phase),
        ("start", pulse.start),
        ("duration", pulse.duration),
    ];
    let mut finite = true;
    for (field, value) in fields {
        if !value.is_finite() {
            out.push(Violation::NonFinite { pulse: k, field });
            finite = false;
        }
    }
    if finite {
        if pulse.duration <= 0.0 {
            out.push(Violation::NonPositiveDuration(k));
        } else if (pulse.duration * profile.dac_rate).round_ties_even() < 2.0 {
            out.push(Violation::PulseTooShort(k));
        }
        if pulse.start < 0.0 {
            out.push(Violation::NegativeStart(k));
        }
        if !(-1.0..=1.0).contains(&pulse.amplitude) {
            out.push(Violation::AmplitudeOutOfRange(k));
        }
        if pulse.frequency < 0.0 {
            out.push(Violation::NegativeFrequency(k));
        } else if pulse.frequency > profile.max_frequency {
            out.push(Violation::FrequencyAboveMaximum {
                pulse: k,
                frequency: pulse.frequency,
                maximum: profile.max_frequency,
            });
        }
    }

    match (pulse.kind, pulse.adc) {
        (PulseKind::Readout, None) => out.push(Violation::ReadoutRequiresAdc(k)),
        (PulseKind::Readout, Some(adc)) if adc >= profile.active_adcs => {
            out.push(Violation::AdcOutOfRange {
                pulse: k,
                adc,
                available: profile.active_adcs,
            })
        }
        (PulseKind::Drive | PulseKind::Flux, Some(_)) => out.push(Violation::AdcOnNonReadout(k)),
        _ => {}
    }
    if pulse.kind == PulseKind::Flux {
        if pulse.frequency != 0.0 {
            out.push(Violation::FluxWithCarrier(k));
        }
        if pulse.shape != PulseShape::Rectangular {
            out.push(Violation::FluxNotRectangular(k));
        }
    }
    if pulse.dac >= profile.active_dacs {
        out.push(Violation::DacOutOfRange {
            pulse: k,
            dac: pulse.dac,
            available: profile.active_dacs,
        });
    }
    if let Some(reason) = shape_defect(&pulse.shape) {
        out.push(Violation::InvalidShape { pulse: k, reason });
    }
}

fn shape_defect(shape: &PulseShape) -> Option<&'static str> {
    match shape {
        PulseShape::Rectangular => None,
        PulseShape::Gaussian { rel_sigma } => {
            (!(rel_sigma.is_finite() && *rel_sigma > 0.0)).then_some("rel_sigma must be positive")
        }
        PulseShape::Drag { rel_sigma, beta } => {
            if !(rel_sigma.is_finite() && *rel_sigma > 0.0) {
                Some("rel_sigma must be positive")
            } else if !beta.is_finite() {
                Some("beta must be finite")
            } else {
                None
            }
        }
        PulseShape::Arbitrary {
            i_samples,
            q_samples,
        } => {
            if i_samples.is_empty() || i_samples.len() != q_samples.len() {
                Some("i_samples and q_samples must have equal, nonzero length")
            } else if i_samples
                .iter()
                .chain(q_samples)
                .any(|v| !(-1.0..=1.0).contains(v))
            {
                Some("samples must lie in [-1, 1]")
            } else {
                None
            }
        }
    }
}

fn overlaps(a: &Pulse, b: &Pulse) -> bool {
    a.start < b.end() && b.start < a.end()
}

// Two readouts can share a line when their tones are resolvable within the
// shorter window.
fn multiplexable(a: &Pulse, b: &Pulse) -> bool {
    let window = a.duration.min(b.duration);
    (a.frequency - b.frequency).abs() >= 1.0 / window
}

fn check_overlaps(sequence: &[Pulse], out: &mut Vec<Violation>) {
    for (x, a) in sequence.iter().enumerate() {
        for (y, b) in sequence.iter().enumerate().skip(x + 1) {
            if !overlaps(a, b) {
                continue;
            }
            let both_readout = a.kind == PulseKind::Readout && b.kind == PulseKind::Readout;
            if a.dac == b.dac && !(both_readout && multiplexable(a, b)) {
                out.push(Violation::ChannelOverlap {
                    dac: a.dac,
                    first: x,
                    second: y,
                });
            }
            if both_readout && a.adc.is_some() && a.adc == b.adc && !multiplexable(a, b) {
                out.push(Violation::MultiplexSpacing {
                    adc: a.adc.unwrap_or_default(),
                    first: x,
                    second: y,
                });
            }
        }
    }
}

fn check_sweepers(request: &ExperimentRequest, profile: &BoardProfile, out: &mut Vec<Violation>) {
    for (s, sweeper) in request.sweepers.iter().enumerate() {
        let n = sweeper.parameters.len();
        if n == 0 {
            out.push(Violation::MalformedSweeper {
                sweeper: s,
                reason: "no parameters",
            });
            continue;
        }
        if sweeper.indexes.len() != n || sweeper.starts.len() != n || sweeper.stops.len() != n {
            out.push(Violation::MalformedSweeper {
                sweeper: s,
                reason: "parameters, indexes, starts and stops differ in length",
            });
            continue;
        }
        if sweeper.expts == 0 {
            out.push(Violation::MalformedSweeper {
                sweeper: s,
                reason: "expts must be at least 1",
            });
        }
        for j in 0..n {
            let parameter = sweeper.parameters[j];
            let index = sweeper.indexes[j];
            let (lo, hi) = (
                sweeper.starts[j].min(sweeper.stops[j]),
                sweeper.starts[j].max(sweeper.stops[j]),
            );
            if !(lo.is_finite() && hi.is_finite()) {
                out.push(Violation::MalformedSweeper {
                    sweeper: s,
                    reason: "start and stop values must be finite",
                });
                continue;
            }

            if parameter.targets_qubit() {
                match request.qubits.get(index) {
                    None => out.push(Violation::SweeperIndexOutOfRange {
                        sweeper: s,
                        parameter,
                        index,
                    }),
                    Some(q) if q.dac.is_none() => out.push(Violation::BiasSweepWithoutDac {
                        sweeper: s,
                        qubit: index,
                    }),
                    Some(_) => {}
                }
                continue;
            }

            let Some(pulse) = request.sequence.get(index) else {
                out.push(Violation::SweeperIndexOutOfRange {
                    sweeper: s,
                    parameter,
                    index,
                });
                continue;
            };
            let in_range = match parameter {
                Parameter::Duration => {
                    out.push(Violation::UnsupportedSweeperParameter {
                        parameter,
                        target: None,
                    });
                    continue;
                }
                Parameter::Frequency => match pulse.kind {
                    PulseKind::Drive => lo >= 0.0 && hi <= profile.max_frequency,
                    PulseKind::Readout | PulseKind::Flux => {
                        let target = if pulse.kind == PulseKind::Readout {
                            "readout"
                        } else {
                            "flux"
                        };
                        out.push(Violation::UnsupportedSweeperParameter {
                            parameter,
                            target: Some(target),
                        });
                        continue;
                    }
                },
                Parameter::Amplitude => lo >= -1.0 && hi <= 1.0,
                Parameter::Start => lo >= 0.0,
                Parameter::RelativePhase => true,
                Parameter::Bias => unreachable!("handled above"),
            };
            if !in_range {
                out.push(Violation::SweepValueOutOfRange {
                    sweeper: s,
                    parameter,
                });
            }
        }
    }
}
