use thiserror::Error;

use super::PulseShape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("pulse shorter than two samples ({samples} at the converter rate)")]
    TooShort { samples: i64 },
    #[error("invalid envelope argument: {0}")]
    InvalidArgument(&'static str),
}

/// Sampled baseband envelope, one value per DAC tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Envelope {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }
}

/// Samples `shape` at `sampling_rate` over `duration`.
///
/// The sample count is `round(duration * sampling_rate)` with ties to even,
/// the same rounding the compiler uses for tick quantization.
pub fn envelope_samples(
    shape: &PulseShape,
    amplitude: f64,
    duration: f64,
    sampling_rate: f64,
) -> Result<Envelope, EnvelopeError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(EnvelopeError::InvalidArgument("duration must be positive"));
    }
    if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
        return Err(EnvelopeError::InvalidArgument(
            "sampling rate must be positive",
        ));
    }
    let samples = (duration * sampling_rate).round_ties_even();
    if samples < 2.0 {
        return Err(EnvelopeError::TooShort {
            samples: samples as i64,
        });
    }
    Ok(sample_count_envelope(shape, amplitude, samples as usize))
}

/// Same as [`envelope_samples`] with the sample count already known (`n >= 2`).
pub(crate) fn sample_count_envelope(shape: &PulseShape, amplitude: f64, n: usize) -> Envelope {
    match shape {
        PulseShape::Rectangular => Envelope {
            i: vec![amplitude; n],
            q: vec![0.0; n],
        },
        PulseShape::Gaussian { rel_sigma } => Envelope {
            i: gaussian(amplitude, *rel_sigma, n),
            q: vec![0.0; n],
        },
        PulseShape::Drag { rel_sigma, beta } => {
            let i = gaussian(amplitude, *rel_sigma, n);
            let q = derivative(&i, *beta);
            Envelope { i, q }
        }
        PulseShape::Arbitrary {
            i_samples,
            q_samples,
        } => Envelope {
            i: resample(i_samples, n, amplitude),
            q: resample(q_samples, n, amplitude),
        },
    }
}

fn gaussian(amplitude: f64, rel_sigma: f64, n: usize) -> Vec<f64> {
    let sigma = n as f64 / rel_sigma;
    let center = (n as f64 - 1.0) / 2.0;
    let denom = 2.0 * sigma * sigma;
    (0..n)
        .map(|k| {
            let x = k as f64 - center;
            amplitude * (-(x * x) / denom).exp()
        })
        .collect()
}

// Central difference, one-sided at both edges.
fn derivative(i: &[f64], beta: f64) -> Vec<f64> {
    let n = i.len();
    (0..n)
        .map(|k| {
            let d = if k == 0 {
                i[1] - i[0]
            } else if k == n - 1 {
                i[n - 1] - i[n - 2]
            } else {
                (i[k + 1] - i[k - 1]) / 2.0
            };
            beta * d
        })
        .collect()
}

// Nearest-neighbour resampling onto `n` points.
fn resample(src: &[f64], n: usize, amplitude: f64) -> Vec<f64> {
    let m = src.len();
    if m == 0 {
        return vec![0.0; n];
    }
    if m == n {
        return src.iter().map(|v| v * amplitude).collect();
    }
    (0..n)
        .map(|k| {
            let pos = ((k as f64 + 0.5) * m as f64 / n as f64).floor() as usize;
            src[pos.min(m - 1)] * amplitude
        })
        .collect()
}
