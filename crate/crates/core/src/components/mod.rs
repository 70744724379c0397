//! Domain types shared by clients and the server.
//!
//! Everything here is an immutable value. Units follow the wire format:
//! frequencies in Hz, times in seconds, phases in radians and amplitudes as
//! a fraction of DAC full scale.

pub(crate) mod envelope;
mod generate;
mod sweep;
mod validate;

use serde::{Deserialize, Deserializer, Serialize};

pub use envelope::{envelope_samples, Envelope, EnvelopeError};
pub use generate::random_request;
pub use sweep::{sweep_grid, sweeper_values, Assignment, ParameterUpdate, SweepGrid};
pub use validate::{validate_request, Violation};

/// Envelope of a pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum PulseShape {
    Rectangular,
    /// Gaussian with `sigma = duration / rel_sigma`.
    Gaussian {
        rel_sigma: f64,
    },
    /// Gaussian in-phase component with a derivative-shaped quadrature.
    Drag {
        rel_sigma: f64,
        beta: f64,
    },
    /// User supplied IQ samples in `[-1, 1]`.
    Arbitrary {
        i_samples: Vec<f64>,
        q_samples: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseKind {
    Drive,
    Readout,
    Flux,
}

/// One timed RF or flux event. `start` is absolute from the sequence origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub kind: PulseKind,
    pub shape: PulseShape,
    pub frequency: f64,
    pub amplitude: f64,
    pub relative_phase: f64,
    pub start: f64,
    pub duration: f64,
    pub dac: usize,
    #[serde(deserialize_with = "required_nullable")]
    pub adc: Option<usize>,
    pub name: String,
}

impl Pulse {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Acquisition and repetition settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Hardware repetitions.
    pub reps: u64,
    /// Software repetitions.
    pub soft_avgs: u64,
    /// Relaxation delay between repetitions, seconds.
    pub repetition_duration: f64,
    pub average: bool,
}

impl Config {
    pub fn shots(&self) -> u64 {
        self.reps * self.soft_avgs
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            reps: 1000,
            soft_avgs: 1,
            repetition_duration: 100e-6,
            average: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Qubit {
    #[serde(deserialize_with = "required_nullable")]
    pub bias: Option<f64>,
    /// Flux channel.
    #[serde(deserialize_with = "required_nullable")]
    pub dac: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Frequency,
    Amplitude,
    RelativePhase,
    Start,
    Duration,
    Bias,
}

impl Parameter {
    /// Bias targets the qubit list; every other parameter targets a pulse.
    pub fn targets_qubit(self) -> bool {
        matches!(self, Parameter::Bias)
    }
}

impl std::fmt::Display for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Parameter::Frequency => "Frequency",
            Parameter::Amplitude => "Amplitude",
            Parameter::RelativePhase => "RelativePhase",
            Parameter::Start => "Start",
            Parameter::Duration => "Duration",
            Parameter::Bias => "Bias",
        };
        f.write_str(name)
    }
}

/// A real-time scan. All parameters of one sweeper advance together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweeper {
    pub parameters: Vec<Parameter>,
    pub indexes: Vec<usize>,
    pub starts: Vec<f64>,
    pub stops: Vec<f64>,
    pub expts: usize,
}

impl Sweeper {
    pub fn single(parameter: Parameter, index: usize, start: f64, stop: f64, expts: usize) -> Self {
        Self {
            parameters: vec![parameter],
            indexes: vec![index],
            starts: vec![start],
            stops: vec![stop],
            expts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OperationCode {
    ExecutePulseSequence,
    ExecutePulseSequenceRaw,
    ExecuteSweeps,
}

impl OperationCode {
    pub fn wire_name(self) -> &'static str {
        match self {
            OperationCode::ExecutePulseSequence => "EXECUTE_PULSE_SEQUENCE",
            OperationCode::ExecutePulseSequenceRaw => "EXECUTE_PULSE_SEQUENCE_RAW",
            OperationCode::ExecuteSweeps => "EXECUTE_SWEEPS",
        }
    }

    pub fn from_wire_name(name: &str) -> Option<Self> {
        match name {
            "EXECUTE_PULSE_SEQUENCE" => Some(OperationCode::ExecutePulseSequence),
            "EXECUTE_PULSE_SEQUENCE_RAW" => Some(OperationCode::ExecutePulseSequenceRaw),
            "EXECUTE_SWEEPS" => Some(OperationCode::ExecuteSweeps),
            _ => None,
        }
    }
}

/// The unit of wire transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRequest {
    pub operation_code: OperationCode,
    pub cfg: Config,
    pub sequence: Vec<Pulse>,
    pub qubits: Vec<Qubit>,
    pub sweepers: Vec<Sweeper>,
}

impl ExperimentRequest {
    pub fn readout_count(&self) -> usize {
        self.sequence
            .iter()
            .filter(|p| p.kind == PulseKind::Readout)
            .count()
    }

    /// End time of the last pulse, i.e. the duration of one shot.
    pub fn sequence_duration(&self) -> f64 {
        self.sequence.iter().map(Pulse::end).fold(0.0, f64::max)
    }

    /// Number of points executed by one request: the sweep grid size, or 1.
    pub fn point_count(&self) -> usize {
        self.sweepers.iter().map(|s| s.expts).product()
    }
}

/// Acquired `i` and `q` data stored flat in row-major order.
///
/// Shapes by mode, with `R` readouts and `P` sweep points:
///
/// | mode                 | averaged         | singleshot          |
/// |----------------------|------------------|---------------------|
/// | sequence             | `[R]`            | `[R, reps]`         |
/// | raw                  | `[R, window]`    | `[R, window]`       |
/// | sweeps               | `[R, P]`         | `[R, P, reps]`      |
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    shape: Vec<usize>,
    i: Vec<f64>,
    q: Vec<f64>,
}

impl AcquisitionResult {
    /// Panics if the shape does not describe `i.len()` values or `i` and `q`
    /// differ in length.
    pub fn new(shape: Vec<usize>, i: Vec<f64>, q: Vec<f64>) -> Self {
        let total: usize = shape.iter().product();
        assert_eq!(i.len(), q.len(), "i and q must be congruent");
        assert_eq!(total, i.len(), "shape {shape:?} does not match data length");
        Self { shape, i, q }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn i(&self) -> &[f64] {
        &self.i
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Row `k` along the first axis.
    pub fn readout(&self, k: usize) -> (&[f64], &[f64]) {
        let stride: usize = self.shape.iter().skip(1).product();
        let range = k * stride..(k + 1) * stride;
        (&self.i[range.clone()], &self.q[range])
    }

    pub fn is_finite(&self) -> bool {
        self.i.iter().chain(&self.q).all(|v| v.is_finite())
    }
}

// Option fields are optional keys by default in serde; the wire format wants
// the key present with an explicit null.
fn required_nullable<'de, D, T>(deserializer: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(deserializer)
}
