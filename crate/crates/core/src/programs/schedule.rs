use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::backend::BoardProfile;
use crate::components::envelope::sample_count_envelope;
use crate::components::{Envelope, ExperimentRequest, PulseKind, PulseShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("pulse {pulse}: pulse shorter than two samples")]
    PulseTooShort { pulse: usize },
    #[error("pulses {first} and {second} overlap on dac {channel} after quantization")]
    Overlap {
        channel: usize,
        first: usize,
        second: usize,
    },
    #[error("readouts {first} and {second} on adc {adc} are not separable in frequency")]
    MultiplexConflict {
        adc: usize,
        first: usize,
        second: usize,
    },
    #[error("pulse {pulse}: flux pulse on dac {dac} which is not the flux line of any qubit")]
    FluxWithoutQubit { pulse: usize, dac: usize },
    #[error("pulse {pulse}: readout without adc")]
    MissingAdc { pulse: usize },
    #[error("pulse {pulse}: negative start")]
    NegativeStart { pulse: usize },
}

/// One pulse placed on the DAC clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    /// Index of the source pulse in the request sequence.
    pub pulse: usize,
    pub kind: PulseKind,
    pub channel: usize,
    pub start_tick: u64,
    pub length_ticks: u64,
    pub envelope: Arc<Envelope>,
    /// Carrier, Hz.
    pub frequency: f64,
    /// Radians.
    pub phase: f64,
    pub amplitude: f64,
}

/// An integration window on the ADC clock, one per readout pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub pulse: usize,
    pub adc: usize,
    pub start_tick: u64,
    /// Window length in ADC ticks.
    pub length: u64,
    /// Demodulation frequency, Hz.
    pub frequency: f64,
    pub phase: f64,
}

/// A compiled, tick-quantized program.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Sorted by `(start_tick, pulse)`.
    pub events: Vec<ScheduledEvent>,
    /// Sequence order.
    pub acquisitions: Vec<Acquisition>,
    /// Static level per flux channel for the whole schedule.
    pub biases: BTreeMap<usize, f64>,
    /// Flux line of the simulated qubit (the first qubit of the request).
    pub qubit_flux_channel: Option<usize>,
    /// Seconds.
    pub duration: f64,
    pub dac_rate: f64,
    pub adc_rate: f64,
}

impl Schedule {
    pub fn dac_seconds(&self, ticks: u64) -> f64 {
        ticks as f64 / self.dac_rate
    }

    pub fn adc_seconds(&self, ticks: u64) -> f64 {
        ticks as f64 / self.adc_rate
    }

    /// Checks ordering, per-channel exclusivity and the duration bound.
    pub fn check_invariants(&self) -> Result<(), String> {
        for w in self.events.windows(2) {
            if (w[0].start_tick, w[0].pulse) > (w[1].start_tick, w[1].pulse) {
                return Err("events out of order".into());
            }
        }
        for (x, a) in self.events.iter().enumerate() {
            for b in &self.events[x + 1..] {
                if a.channel == b.channel
                    && ticks_overlap(a.start_tick, a.length_ticks, b.start_tick, b.length_ticks)
                    && !(a.kind == PulseKind::Readout && b.kind == PulseKind::Readout)
                {
                    return Err(format!("pulses {} and {} overlap", a.pulse, b.pulse));
                }
            }
        }
        let last = self
            .events
            .iter()
            .map(|e| self.dac_seconds(e.start_tick + e.length_ticks))
            .chain(
                self.acquisitions
                    .iter()
                    .map(|a| self.adc_seconds(a.start_tick + a.length)),
            )
            .fold(0.0, f64::max);
        if self.duration < last {
            return Err("duration shorter than last event".into());
        }
        Ok(())
    }
}

fn ticks_overlap(a_start: u64, a_len: u64, b_start: u64, b_len: u64) -> bool {
    a_start < b_start + b_len && b_start < a_start + a_len
}

fn quantize(seconds: f64, rate: f64) -> u64 {
    (seconds * rate).round_ties_even().max(0.0) as u64
}

#[derive(Debug)]
struct CachedEnvelope {
    shape: PulseShape,
    amplitude: f64,
    envelope: Arc<Envelope>,
}

/// Envelopes of a previous compilation, keyed by pulse index, so that sweep
/// points only re-synthesize pulses whose shape, amplitude or length changed.
#[derive(Debug, Default)]
pub struct EnvelopeCache {
    entries: HashMap<usize, CachedEnvelope>,
}

impl EnvelopeCache {
    /// Seeds the cache with the envelopes of `schedule`, compiled from `request`.
    pub fn primed(request: &ExperimentRequest, schedule: &Schedule) -> Self {
        let entries = schedule
            .events
            .iter()
            .filter_map(|e| {
                let pulse = request.sequence.get(e.pulse)?;
                Some((
                    e.pulse,
                    CachedEnvelope {
                        shape: pulse.shape.clone(),
                        amplitude: e.amplitude,
                        envelope: Arc::clone(&e.envelope),
                    },
                ))
            })
            .collect();
        Self { entries }
    }

    fn get_or_synthesize(
        &mut self,
        pulse: usize,
        shape: &PulseShape,
        amplitude: f64,
        samples: usize,
    ) -> Arc<Envelope> {
        if let Some(hit) = self.entries.get(&pulse) {
            if hit.amplitude == amplitude && hit.envelope.len() == samples && &hit.shape == shape {
                return Arc::clone(&hit.envelope);
            }
        }
        let envelope = Arc::new(sample_count_envelope(shape, amplitude, samples));
        self.entries.insert(
            pulse,
            CachedEnvelope {
                shape: shape.clone(),
                amplitude,
                envelope: Arc::clone(&envelope),
            },
        );
        envelope
    }
}

/// Compiles a validated request for `profile`.
///
/// Starts and durations are rounded to the converter clocks with ties to
/// even. Each readout also yields an acquisition window at the ADC rate.
pub fn compile(
    request: &ExperimentRequest,
    profile: &BoardProfile,
) -> Result<Schedule, CompileError> {
    compile_cached(request, profile, &mut EnvelopeCache::default())
}

pub fn compile_cached(
    request: &ExperimentRequest,
    profile: &BoardProfile,
    cache: &mut EnvelopeCache,
) -> Result<Schedule, CompileError> {
    let mut events = Vec::with_capacity(request.sequence.len());
    let mut acquisitions = Vec::new();

    for (k, pulse) in request.sequence.iter().enumerate() {
        if pulse.start < 0.0 {
            return Err(CompileError::NegativeStart { pulse: k });
        }
        let start_tick = quantize(pulse.start, profile.dac_rate);
        let length_ticks = quantize(pulse.duration, profile.dac_rate);
        if length_ticks < 2 {
            return Err(CompileError::PulseTooShort { pulse: k });
        }
        if pulse.kind == PulseKind::Flux && !request.qubits.iter().any(|q| q.dac == Some(pulse.dac))
        {
            return Err(CompileError::FluxWithoutQubit {
                pulse: k,
                dac: pulse.dac,
            });
        }
        let envelope =
            cache.get_or_synthesize(k, &pulse.shape, pulse.amplitude, length_ticks as usize);
        events.push(ScheduledEvent {
            pulse: k,
            kind: pulse.kind,
            channel: pulse.dac,
            start_tick,
            length_ticks,
            envelope,
            frequency: pulse.frequency,
            phase: pulse.relative_phase,
            amplitude: pulse.amplitude,
        });

        if pulse.kind == PulseKind::Readout {
            let adc = pulse.adc.ok_or(CompileError::MissingAdc { pulse: k })?;
            acquisitions.push(Acquisition {
                pulse: k,
                adc,
                start_tick: quantize(pulse.start, profile.adc_rate),
                length: quantize(pulse.duration, profile.adc_rate).max(1),
                frequency: pulse.frequency,
                phase: pulse.relative_phase,
            });
        }
    }

    check_channel_overlaps(&events, profile)?;
    check_multiplexing(&acquisitions, profile)?;
    events.sort_by_key(|e| (e.start_tick, e.pulse));

    let biases = request
        .qubits
        .iter()
        .filter_map(|q| q.dac.map(|dac| (dac, q.bias.unwrap_or(0.0))))
        .collect();

    let dac_end = events
        .iter()
        .map(|e| (e.start_tick + e.length_ticks) as f64 / profile.dac_rate)
        .fold(0.0, f64::max);
    let adc_end = acquisitions
        .iter()
        .map(|a| (a.start_tick + a.length) as f64 / profile.adc_rate)
        .fold(0.0, f64::max);

    Ok(Schedule {
        events,
        acquisitions,
        biases,
        qubit_flux_channel: request.qubits.first().and_then(|q| q.dac),
        duration: dac_end.max(adc_end),
        dac_rate: profile.dac_rate,
        adc_rate: profile.adc_rate,
    })
}

fn separable(f1: f64, f2: f64, window_seconds: f64) -> bool {
    (f1 - f2).abs() >= 1.0 / window_seconds
}

fn check_channel_overlaps(
    events: &[ScheduledEvent],
    profile: &BoardProfile,
) -> Result<(), CompileError> {
    for (x, a) in events.iter().enumerate() {
        for b in &events[x + 1..] {
            if a.channel != b.channel
                || !ticks_overlap(a.start_tick, a.length_ticks, b.start_tick, b.length_ticks)
            {
                continue;
            }
            let window = a.length_ticks.min(b.length_ticks) as f64 / profile.dac_rate;
            let multiplexed = a.kind == PulseKind::Readout
                && b.kind == PulseKind::Readout
                && separable(a.frequency, b.frequency, window);
            if !multiplexed {
                return Err(CompileError::Overlap {
                    channel: a.channel,
                    first: a.pulse,
                    second: b.pulse,
                });
            }
        }
    }
    Ok(())
}

fn check_multiplexing(
    acquisitions: &[Acquisition],
    profile: &BoardProfile,
) -> Result<(), CompileError> {
    for (x, a) in acquisitions.iter().enumerate() {
        for b in &acquisitions[x + 1..] {
            if a.adc != b.adc || !ticks_overlap(a.start_tick, a.length, b.start_tick, b.length) {
                continue;
            }
            let window = a.length.min(b.length) as f64 / profile.adc_rate;
            if !separable(a.frequency, b.frequency, window) {
                return Err(CompileError::MultiplexConflict {
                    adc: a.adc,
                    first: a.pulse,
                    second: b.pulse,
                });
            }
        }
    }
    Ok(())
}
