//! Deterministic stand-in for an RFSoC running pulse programs on one qubit.
//!
//! The qubit is a Bloch vector. Drive pulses rotate it, idle gaps damp it
//! with `T1`/`T2`, and every acquisition measures it projectively and
//! returns a noisy point of the state-dependent readout blob. A random
//! clock phase, drawn once per [`BackendState`], rotates all returned IQ
//! data, the way a converter clock reset does on hardware.

mod model;
mod profile;

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::components::{Config, PulseKind};
use crate::programs::Schedule;

pub use model::{bias_to_frequency, ModelError, QubitModel};
pub use profile::{BoardName, BoardProfile};

/// Fixed costs a real controller pays on top of qubit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadModel {
    /// Seconds per client connection.
    pub connection_overhead: f64,
    /// Seconds per program upload and initialization.
    pub program_load_overhead: f64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        Self {
            connection_overhead: 0.050,
            program_load_overhead: 0.200,
        }
    }
}

/// `ideal + n_connections * connection + n_program_loads * load`.
pub fn simulated_wall_time(
    n_program_loads: u64,
    n_connections: u64,
    ideal: f64,
    overheads: &OverheadModel,
) -> f64 {
    ideal
        + n_connections as f64 * overheads.connection_overhead
        + n_program_loads as f64 * overheads.program_load_overhead
}

/// Projection axis and threshold for single-shot state assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discriminator {
    /// Radians.
    pub angle: f64,
    pub threshold: f64,
}

impl Discriminator {
    /// Axis through both centers, threshold at their midpoint.
    pub fn from_centers(ground: (f64, f64), excited: (f64, f64)) -> Self {
        let angle = (excited.1 - ground.1).atan2(excited.0 - ground.0);
        let project = |p: (f64, f64)| p.0 * angle.cos() + p.1 * angle.sin();
        Self {
            angle,
            threshold: 0.5 * (project(ground) + project(excited)),
        }
    }
}

/// Assigns state 1 when the projection exceeds the threshold. Ties go to 0.
pub fn classify(i: f64, q: f64, discriminator: &Discriminator) -> u8 {
    let projection = i * discriminator.angle.cos() + q * discriminator.angle.sin();
    u8::from(projection > discriminator.threshold)
}

/// The one long-lived hardware instance owned by a server.
#[derive(Debug, Clone)]
pub struct BackendState {
    model: QubitModel,
    profile: BoardProfile,
    clock_phase: f64,
    collapse_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    overheads: OverheadModel,
    program_loads: u64,
    hardware_time: f64,
}

/// Draws the clock phase and seeds the measurement and noise streams from
/// `seed`. Equal seeds give identical states.
pub fn init_backend(
    model: QubitModel,
    profile: BoardProfile,
    seed: u64,
    overheads: OverheadModel,
) -> BackendState {
    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed);
    let clock_phase = phase_rng.random_range(0.0..TAU);
    // Separate streams so that the collapse sequence does not depend on how
    // many noise samples an acquisition mode consumes.
    let mut collapse_rng = ChaCha8Rng::seed_from_u64(seed);
    collapse_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(2);
    BackendState {
        model,
        profile,
        clock_phase,
        collapse_rng,
        noise_rng,
        overheads,
        program_loads: 0,
        hardware_time: 0.0,
    }
}

#[derive(Debug, Clone, Copy)]
struct Bloch {
    x: f64,
    y: f64,
    z: f64,
}

impl Bloch {
    const GROUND: Bloch = Bloch {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    /// Rotation by `theta` about the equatorial axis at angle `axis`.
    fn rotate(&mut self, axis: f64, theta: f64) {
        let (nx, ny) = (axis.cos(), axis.sin());
        let (s, c) = theta.sin_cos();
        let dot = nx * self.x + ny * self.y;
        // n x v with n = (nx, ny, 0)
        let cross = (ny * self.z, -nx * self.z, nx * self.y - ny * self.x);
        self.x = self.x * c + cross.0 * s + nx * dot * (1.0 - c);
        self.y = self.y * c + cross.1 * s + ny * dot * (1.0 - c);
        self.z = self.z * c + cross.2 * s;
    }

    fn idle(&mut self, dt: f64, t1: f64, t2: f64) {
        let transverse = (-dt / t2).exp();
        self.x *= transverse;
        self.y *= transverse;
        self.z = 1.0 - (1.0 - self.z) * (-dt / t1).exp();
    }

    fn excited_probability(&self) -> f64 {
        ((1.0 - self.z) / 2.0).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
enum Step {
    Rotate {
        at: f64,
        end: f64,
        axis: f64,
        theta: f64,
    },
    Measure {
        at: f64,
        end: f64,
        /// Noiseless (i, q) for states 0 and 1, clock phase included.
        points: [(f64, f64); 2],
    },
}

impl Step {
    fn at(&self) -> f64 {
        match self {
            Step::Rotate { at, .. } | Step::Measure { at, .. } => *at,
        }
    }
}

/// A schedule lowered onto the physics model: every deterministic quantity
/// of a shot precomputed, so that shots only draw random numbers.
#[derive(Debug, Clone)]
pub struct ShotPlan {
    steps: Vec<Step>,
    /// Step index of each acquisition, in schedule order.
    acquisition_steps: Vec<usize>,
    windows: Vec<usize>,
}

impl ShotPlan {
    pub fn acquisitions(&self) -> usize {
        self.acquisition_steps.len()
    }
}

fn rotate_point(p: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (p.0 * c - p.1 * s, p.0 * s + p.1 * c)
}

impl BackendState {
    pub fn model(&self) -> &QubitModel {
        &self.model
    }

    pub fn profile(&self) -> &BoardProfile {
        &self.profile
    }

    pub fn overheads(&self) -> &OverheadModel {
        &self.overheads
    }

    pub fn clock_phase(&self) -> f64 {
        self.clock_phase
    }

    /// Same state with a different clock phase.
    pub fn with_clock_phase(mut self, clock_phase: f64) -> Self {
        self.clock_phase = clock_phase.rem_euclid(TAU);
        self
    }

    /// Program uploads since initialization.
    pub fn program_loads(&self) -> u64 {
        self.program_loads
    }

    /// Simulated qubit time consumed so far, relaxation waits included.
    pub fn hardware_time(&self) -> f64 {
        self.hardware_time
    }

    pub(crate) fn record_program_load(&mut self) {
        self.program_loads += 1;
    }

    pub(crate) fn record_shots(&mut self, shots: u64, sequence: f64, relaxation: f64) {
        self.hardware_time += shots as f64 * (sequence + relaxation);
    }

    /// Flux level seen by the qubit at time `t`.
    fn flux_level(schedule: &Schedule, t: f64) -> f64 {
        let Some(channel) = schedule.qubit_flux_channel else {
            return 0.0;
        };
        let static_bias = schedule.biases.get(&channel).copied().unwrap_or(0.0);
        let pulses: f64 = schedule
            .events
            .iter()
            .filter(|e| e.kind == PulseKind::Flux && e.channel == channel)
            .filter(|e| {
                let start = schedule.dac_seconds(e.start_tick);
                let end = schedule.dac_seconds(e.start_tick + e.length_ticks);
                start <= t && t < end
            })
            .map(|e| e.amplitude)
            .sum();
        static_bias + pulses
    }

    fn rotation_angle(&self, amplitude: f64, duration: f64, detuning: f64) -> f64 {
        let m = &self.model;
        let relative = amplitude / m.pi_amplitude;
        let rabi = relative.abs() / (2.0 * m.reference_duration);
        let lineshape = if detuning == 0.0 {
            1.0
        } else if rabi == 0.0 {
            0.0
        } else {
            let x = 2.0 * detuning / rabi;
            1.0 / (1.0 + x * x)
        };
        PI * relative * (duration / m.reference_duration) * lineshape
    }

    pub fn plan(&self, schedule: &Schedule) -> ShotPlan {
        let mut steps: Vec<(f64, u8, usize, Step)> = Vec::new();
        for (k, e) in schedule.events.iter().enumerate() {
            if e.kind != PulseKind::Drive {
                continue;
            }
            let at = schedule.dac_seconds(e.start_tick);
            let duration = schedule.dac_seconds(e.length_ticks);
            let detuning = e.frequency - self.model.qubit_frequency(Self::flux_level(schedule, at));
            steps.push((
                at,
                0,
                k,
                Step::Rotate {
                    at,
                    end: at + duration,
                    axis: e.phase,
                    theta: self.rotation_angle(e.amplitude, duration, detuning),
                },
            ));
        }
        for (k, a) in schedule.acquisitions.iter().enumerate() {
            let at = schedule.adc_seconds(a.start_tick);
            let end = at + schedule.adc_seconds(a.length);
            let rotation = self.clock_phase + a.phase;
            let centers = [self.model.blob_center_0, self.model.blob_center_1];
            let points = [0u8, 1].map(|s| {
                let scale = self.model.resonator_response(a.frequency, s);
                let c = centers[usize::from(s)];
                rotate_point((c[0] * scale, c[1] * scale), rotation)
            });
            steps.push((at, 1, k, Step::Measure { at, end, points }));
        }
        // drives before measurements at equal times, then schedule order
        steps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut acquisition_steps = vec![0; schedule.acquisitions.len()];
        for (pos, (_, kind, k, _)) in steps.iter().enumerate() {
            if *kind == 1 {
                acquisition_steps[*k] = pos;
            }
        }
        ShotPlan {
            steps: steps.into_iter().map(|s| s.3).collect(),
            acquisition_steps,
            windows: schedule
                .acquisitions
                .iter()
                .map(|a| a.length as usize)
                .collect(),
        }
    }

    /// Evolves one shot and writes the noiseless readout point of each
    /// acquisition, in schedule order, into `out`.
    fn evolve(&mut self, plan: &ShotPlan, out: &mut Vec<(f64, f64)>) {
        let (t1, t2) = (self.model.t1, self.model.t2);
        let mut measured = vec![(0.0, 0.0); plan.steps.len()];
        let mut state = Bloch::GROUND;
        let mut now = 0.0;
        for (pos, step) in plan.steps.iter().enumerate() {
            let at = step.at();
            if at > now {
                state.idle(at - now, t1, t2);
                now = at;
            }
            match step {
                Step::Rotate {
                    end, axis, theta, ..
                } => {
                    state.rotate(*axis, *theta);
                    now = now.max(*end);
                }
                Step::Measure { end, points, .. } => {
                    let p = state.excited_probability();
                    let u: f64 = self.collapse_rng.random();
                    let excited = u < p;
                    state = Bloch {
                        x: 0.0,
                        y: 0.0,
                        z: if excited { -1.0 } else { 1.0 },
                    };
                    measured[pos] = points[usize::from(excited)];
                    now = now.max(*end);
                }
            }
        }
        out.clear();
        out.extend(plan.acquisition_steps.iter().map(|&pos| measured[pos]));
    }

    fn gaussian(&mut self) -> f64 {
        self.noise_rng.sample(StandardNormal)
    }

    /// One integrated (i, q) per acquisition, in schedule order.
    pub fn run_planned_shot(&mut self, plan: &ShotPlan, out: &mut Vec<(f64, f64)>) {
        self.evolve(plan, out);
        let sigma = self.model.blob_sigma;
        if sigma > 0.0 {
            for p in out.iter_mut() {
                p.0 += sigma * self.gaussian();
                p.1 += sigma * self.gaussian();
            }
        }
    }

    pub fn run_shot(&mut self, schedule: &Schedule) -> Vec<(f64, f64)> {
        let plan = self.plan(schedule);
        let mut out = Vec::with_capacity(plan.acquisitions());
        self.run_planned_shot(&plan, &mut out);
        out
    }

    /// Demodulated, non-integrated time series of every acquisition,
    /// averaged over `cfg.shots()` shots. Returns `(i, q)` per acquisition.
    ///
    /// Per-sample noise is `blob_sigma * sqrt(window)`, so the window mean
    /// carries the same variance as one integrated shot.
    pub fn acquire_raw(&mut self, schedule: &Schedule, cfg: &Config) -> Vec<(Vec<f64>, Vec<f64>)> {
        let plan = self.plan(schedule);
        self.acquire_raw_planned(&plan, cfg.shots())
    }

    pub(crate) fn acquire_raw_planned(
        &mut self,
        plan: &ShotPlan,
        shots: u64,
    ) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut series: Vec<(Vec<f64>, Vec<f64>)> = plan
            .windows
            .iter()
            .map(|&w| (vec![0.0; w], vec![0.0; w]))
            .collect();
        let mut points = Vec::with_capacity(plan.acquisitions());
        let sigma = self.model.blob_sigma;
        for _ in 0..shots {
            self.evolve(plan, &mut points);
            for (k, &(pi, pq)) in points.iter().enumerate() {
                let window = plan.windows[k];
                let sample_sigma = sigma * (window as f64).sqrt();
                for n in 0..window {
                    let (ni, nq) = if sample_sigma > 0.0 {
                        (self.gaussian(), self.gaussian())
                    } else {
                        (0.0, 0.0)
                    };
                    series[k].0[n] += pi + sample_sigma * ni;
                    series[k].1[n] += pq + sample_sigma * nq;
                }
            }
        }
        let norm = shots.max(1) as f64;
        for (i, q) in series.iter_mut() {
            i.iter_mut().for_each(|v| *v /= norm);
            q.iter_mut().for_each(|v| *v /= norm);
        }
        series
    }
}
