use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid qubit model: {0}")]
    Invalid(&'static str),
}

/// Physics of the simulated flux-tunable qubit and its readout resonator.
///
/// The JSON model file uses these field names verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitModel {
    /// Hz
    pub resonator_frequency: f64,
    /// Full linewidth kappa, Hz.
    pub resonator_linewidth: f64,
    /// Resonator shift when the qubit is excited, Hz.
    pub dispersive_shift: f64,
    /// Transition frequency at the flux sweet spot, Hz.
    pub qubit_frequency_max: f64,
    /// Flux level of the sweet spot.
    pub flux_offset: f64,
    pub flux_period: f64,
    /// Amplitude giving a pi rotation at `reference_duration`.
    pub pi_amplitude: f64,
    /// Seconds.
    pub reference_duration: f64,
    pub t1: f64,
    pub t2: f64,
    /// Readout response (i, q) with the qubit in state 0.
    pub blob_center_0: [f64; 2],
    /// Readout response (i, q) with the qubit in state 1.
    pub blob_center_1: [f64; 2],
    /// Per-quadrature standard deviation of one integrated shot.
    pub blob_sigma: f64,
}

impl Default for QubitModel {
    fn default() -> Self {
        Self {
            resonator_frequency: 5.8e9,
            resonator_linewidth: 1e6,
            dispersive_shift: 0.5e6,
            qubit_frequency_max: 5.0e9,
            flux_offset: 0.0,
            flux_period: 1.0,
            pi_amplitude: 0.5,
            reference_duration: 40e-9,
            t1: 10e-6,
            t2: 15e-6,
            blob_center_0: [1.0, 0.0],
            blob_center_1: [0.0, 1.0],
            blob_sigma: 0.34,
        }
    }
}

impl QubitModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let model: QubitModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all_finite = [
            self.resonator_frequency,
            self.resonator_linewidth,
            self.dispersive_shift,
            self.qubit_frequency_max,
            self.flux_offset,
            self.flux_period,
            self.pi_amplitude,
            self.reference_duration,
            self.t1,
            self.t2,
            self.blob_sigma,
        ]
        .iter()
        .chain(&self.blob_center_0)
        .chain(&self.blob_center_1)
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(ModelError::Invalid("all fields must be finite"));
        }
        if self.resonator_linewidth <= 0.0 {
            return Err(ModelError::Invalid("resonator_linewidth must be positive"));
        }
        if self.blob_sigma < 0.0 {
            return Err(ModelError::Invalid("blob_sigma must be non-negative"));
        }
        if !(self.pi_amplitude > 0.0 && self.pi_amplitude <= 1.0) {
            return Err(ModelError::Invalid("pi_amplitude must lie in (0, 1]"));
        }
        if self.reference_duration <= 0.0 || self.t1 <= 0.0 || self.t2 <= 0.0 {
            return Err(ModelError::Invalid(
                "durations and coherence times must be positive",
            ));
        }
        if self.t2 > 2.0 * self.t1 {
            return Err(ModelError::Invalid("t2 must not exceed 2 t1"));
        }
        if self.flux_period <= 0.0 {
            return Err(ModelError::Invalid("flux_period must be positive"));
        }
        Ok(())
    }

    /// Qubit transition frequency at the given flux level.
    pub fn qubit_frequency(&self, flux_level: f64) -> f64 {
        bias_to_frequency(self, flux_level)
    }

    /// Transmission factor of the readout resonator for a probe at
    /// `frequency` with the qubit in `state`.
    pub fn resonator_response(&self, frequency: f64, state: u8) -> f64 {
        let detuning =
            frequency - self.resonator_frequency - f64::from(state) * self.dispersive_shift;
        let x = detuning * 2.0 / self.resonator_linewidth;
        1.0 / (1.0 + x * x)
    }
}

/// Tunable-transmon flux dependence:
/// `f_max * sqrt(|cos(pi (level - offset) / period)|)`.
pub fn bias_to_frequency(model: &QubitModel, flux_level: f64) -> f64 {
    let phase = PI * (flux_level - model.flux_offset) / model.flux_period;
    model.qubit_frequency_max * phase.cos().abs().sqrt()
}
