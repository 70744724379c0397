#![allow(dead_code)]

use std::f64::consts::TAU;
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rfsoc_sequencer::backend::{init_backend, BoardProfile, OverheadModel, QubitModel};
use rfsoc_sequencer::client::Client;
use rfsoc_sequencer::components::{
    random_request, Config, ExperimentRequest, OperationCode, Pulse, PulseKind, PulseShape, Qubit,
};
use rfsoc_sequencer::server::{Server, ServerConfig, ServerHandle};
use rfsoc_sequencer::wire;

/// A server on an ephemeral loopback port with the default model.
pub fn spawn_server(seed: u64) -> ServerHandle {
    spawn_server_with(QubitModel::default(), seed)
}

pub fn spawn_server_with(model: QubitModel, seed: u64) -> ServerHandle {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let backend = init_backend(
        model,
        BoardProfile::zcu216(),
        seed,
        OverheadModel::default(),
    );
    Server::with_listener(listener, backend, ServerConfig::default())
        .spawn()
        .expect("spawn server")
}

pub fn readout_pulse(start: f64) -> Pulse {
    Pulse {
        kind: PulseKind::Readout,
        shape: PulseShape::Rectangular,
        frequency: 5.80025e9,
        amplitude: 0.5,
        relative_phase: 0.0,
        start,
        duration: 1e-6,
        dac: 1,
        adc: Some(0),
        name: "readout".into(),
    }
}

pub fn drive_pulse(amplitude: f64, duration: f64) -> Pulse {
    Pulse {
        kind: PulseKind::Drive,
        shape: PulseShape::Rectangular,
        frequency: 5.0e9,
        amplitude,
        relative_phase: 0.0,
        start: 0.0,
        duration,
        dac: 0,
        adc: None,
        name: "drive".into(),
    }
}

/// Drive then readout, on the qubit at its sweet spot.
pub fn drive_readout(amplitude: f64, reps: u64, average: bool) -> ExperimentRequest {
    ExperimentRequest {
        operation_code: OperationCode::ExecutePulseSequence,
        cfg: Config {
            reps,
            soft_avgs: 1,
            repetition_duration: 100e-6,
            average,
        },
        sequence: vec![drive_pulse(amplitude, 40e-9), readout_pulse(40e-9)],
        qubits: vec![Qubit {
            bias: Some(0.0),
            dac: Some(2),
        }],
        sweepers: vec![],
    }
}

pub fn ground_readout(reps: u64) -> ExperimentRequest {
    let mut request = drive_readout(0.0, reps, true);
    request.sequence = vec![readout_pulse(0.0)];
    request
}

/// Angle of the averaged ground-state response.
pub fn measured_phase(client: &Client) -> f64 {
    let result = client.execute(&ground_readout(4096)).unwrap();
    result.q()[0].atan2(result.i()[0]).rem_euclid(TAU)
}

pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// The journal entry lands just after the response is written.
pub fn wait_for_records(server: &ServerHandle, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while server.journal().records().len() < n {
        assert!(Instant::now() < deadline, "journal stuck below {n}");
        thread::sleep(Duration::from_millis(1));
    }
    assert_eq!(server.journal().records().len(), n);
}

pub fn fuzz_payload(rng: &mut ChaCha8Rng, valid: &[u8]) -> Vec<u8> {
    // by hand, so empty payloads can be framed too
    let frame = |payload: &[u8]| {
        let mut bytes = (payload.len() as u32).to_be_bytes().to_vec();
        bytes.extend_from_slice(payload);
        bytes
    };
    match rng.random_range(0..8) {
        // random bytes, framed
        0 => {
            let n = rng.random_range(0..256);
            frame(&(0..n).map(|_| rng.random()).collect::<Vec<u8>>())
        }
        // random bytes, unframed
        1 => {
            let n = rng.random_range(0..64);
            (0..n).map(|_| rng.random()).collect()
        }
        // header promising more than is sent
        2 => {
            let mut bytes = frame(valid);
            let cut = rng.random_range(0..bytes.len());
            bytes.truncate(cut);
            bytes
        }
        // oversized length claim
        3 => {
            let mut bytes = vec![0xff, 0xff, 0xff, rng.random()];
            bytes.extend_from_slice(b"{}");
            bytes
        }
        // byte mutations of a valid request
        4 | 5 => {
            let mut payload = valid.to_vec();
            for _ in 0..rng.random_range(1..6) {
                let at = rng.random_range(0..payload.len());
                match rng.random_range(0..3) {
                    0 => payload[at] = rng.random(),
                    1 => {
                        payload.remove(at);
                    }
                    _ => payload.insert(at, *b"{}[],:\"0-e.".get(rng.random_range(0..11)).unwrap()),
                }
            }
            frame(&payload)
        }
        // structurally random requests, kept small
        _ => {
            let mut request = random_request(rng);
            request.cfg.reps %= 64;
            request.cfg.soft_avgs %= 3;
            for sweeper in &mut request.sweepers {
                sweeper.expts %= 16;
            }
            frame(&wire::encode_request(&request).unwrap())
        }
    }
}
