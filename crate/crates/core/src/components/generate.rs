//! Random requests for round-trip and fuzz testing.
//!
//! Values are finite but otherwise unconstrained, so most generated requests
//! fail validation; they exercise the codec, not the executors.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{
    Config, ExperimentRequest, OperationCode, Parameter, Pulse, PulseKind, PulseShape, Qubit,
    Sweeper,
};

const OPERATIONS: [OperationCode; 3] = [
    OperationCode::ExecutePulseSequence,
    OperationCode::ExecutePulseSequenceRaw,
    OperationCode::ExecuteSweeps,
];
const KINDS: [PulseKind; 3] = [PulseKind::Drive, PulseKind::Readout, PulseKind::Flux];
const PARAMETERS: [Parameter; 6] = [
    Parameter::Frequency,
    Parameter::Amplitude,
    Parameter::RelativePhase,
    Parameter::Start,
    Parameter::Duration,
    Parameter::Bias,
];

/// A float drawn across many magnitudes, including exact zero and negatives.
fn wide_float<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    match rng.random_range(0..8) {
        0 => 0.0,
        1 => rng.random_range(-1.0..1.0),
        2 => rng.random_range(0.0..1e-5),
        3 => rng.random_range(1e8..7e9),
        _ => {
            let mantissa: f64 = rng.random_range(-1.0..1.0);
            mantissa * 10f64.powi(rng.random_range(-300..300))
        }
    }
}

fn shape<R: Rng + ?Sized>(rng: &mut R) -> PulseShape {
    match rng.random_range(0..4) {
        0 => PulseShape::Rectangular,
        1 => PulseShape::Gaussian {
            rel_sigma: wide_float(rng),
        },
        2 => PulseShape::Drag {
            rel_sigma: wide_float(rng),
            beta: wide_float(rng),
        },
        _ => {
            let n = rng.random_range(0..16);
            PulseShape::Arbitrary {
                i_samples: (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                q_samples: (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            }
        }
    }
}

fn name<R: Rng + ?Sized>(rng: &mut R) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '0', '_', ' ', '"', '\\', '\n', 'é', '量', '🙂'];
    let n = rng.random_range(0..12);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn pulse<R: Rng + ?Sized>(rng: &mut R) -> Pulse {
    Pulse {
        kind: *KINDS.choose(rng).unwrap(),
        shape: shape(rng),
        frequency: wide_float(rng),
        amplitude: wide_float(rng),
        relative_phase: wide_float(rng),
        start: wide_float(rng),
        duration: wide_float(rng),
        dac: rng.random_range(0..16),
        adc: rng.random_bool(0.5).then(|| rng.random_range(0..16)),
        name: name(rng),
    }
}

fn sweeper<R: Rng + ?Sized>(rng: &mut R) -> Sweeper {
    let n = rng.random_range(0..4);
    Sweeper {
        parameters: (0..n).map(|_| *PARAMETERS.choose(rng).unwrap()).collect(),
        indexes: (0..n).map(|_| rng.random_range(0..8)).collect(),
        starts: (0..n).map(|_| wide_float(rng)).collect(),
        stops: (0..n).map(|_| wide_float(rng)).collect(),
        expts: rng.random_range(0..1000),
    }
}

/// A structurally random request with finite fields.
pub fn random_request<R: Rng + ?Sized>(rng: &mut R) -> ExperimentRequest {
    ExperimentRequest {
        operation_code: *OPERATIONS.choose(rng).unwrap(),
        cfg: Config {
            reps: rng.random_range(0..1 << 20),
            soft_avgs: rng.random_range(0..64),
            repetition_duration: wide_float(rng),
            average: rng.random_bool(0.5),
        },
        sequence: (0..rng.random_range(0..6)).map(|_| pulse(rng)).collect(),
        qubits: (0..rng.random_range(0..3))
            .map(|_| Qubit {
                bias: rng.random_bool(0.5).then(|| wide_float(rng)),
                dac: rng.random_bool(0.5).then(|| rng.random_range(0..16)),
            })
            .collect(),
        sweepers: (0..rng.random_range(0..3)).map(|_| sweeper(rng)).collect(),
    }
}
