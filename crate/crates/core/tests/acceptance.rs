//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom:
//! `cargo test -p rfsoc-sequencer --test acceptance`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::{erfc, erfc_inv};

use common::{
    drive_readout, fuzz_payload, measured_phase, phase_distance, readout_pulse, spawn_server,
    wait_for_records,
};
use rfsoc_sequencer::backend::{
    bias_to_frequency, init_backend, BoardProfile, OverheadModel, QubitModel,
};
use rfsoc_sequencer::bench::{
    analyze, ideal_time, read_scaling_csv, run_experiment, scaling_report, write_scaling_csv,
    Endpoint, ExperimentKind, ExperimentParams, LocalEndpoint, Runcard,
};
use rfsoc_sequencer::client::{Client, ClientError};
use rfsoc_sequencer::components::{
    random_request, sweep_grid, sweeper_values, ExperimentRequest, OperationCode, Parameter,
    Sweeper,
};
use rfsoc_sequencer::programs::apply_assignment;
use rfsoc_sequencer::wire;

type Outcome = Result<String, String>;

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn local(seed: u64) -> LocalEndpoint {
    local_with(QubitModel::default(), seed)
}

fn local_with(model: QubitModel, seed: u64) -> LocalEndpoint {
    LocalEndpoint::new(init_backend(
        model,
        BoardProfile::zcu216(),
        seed,
        OverheadModel::default(),
    ))
}

fn wire_vectors() -> Outcome {
    let frame = wire::frame_write(b"{}").map_err(|e| e.to_string())?;
    ensure(frame == [0x00, 0x00, 0x00, 0x02, 0x7b, 0x7d], || {
        format!("{{}} framed as {frame:02x?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..1000 {
        let request = random_request(&mut rng);
        let payload = wire::encode_request(&request).map_err(|e| format!("request {k}: {e}"))?;
        let framed = wire::frame_write(&payload).map_err(|e| format!("request {k}: {e}"))?;
        let unframed =
            wire::frame_read(&mut &framed[..]).map_err(|e| format!("request {k}: {e}"))?;
        let decoded = wire::decode_request(&unframed).map_err(|e| format!("request {k}: {e}"))?;
        ensure(decoded == request, || {
            format!("request {k} changed in transit")
        })?;
    }
    Ok("header 00000002 7b7d, 1000/1000 random requests intact".into())
}

fn ideal_time_exactness() -> Outcome {
    let value = ideal_time(4096, &[2e-6], 300e-6);
    ensure(value == 1.236992, || format!("ideal_time = {value:.17}"))?;

    let mut runner = TestRunner::new(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(2000)
    });
    let inputs = (
        1u64..100_000,
        1u64..64,
        prop::collection::vec(0.0f64..1e-3, 0..40),
        prop::collection::vec(0.0f64..1e-3, 0..40),
        0.0f64..1e-3,
    );
    runner
        .run(&inputs, |(shots, k, a, b, relax)| {
            let one = ideal_time(shots, &a, relax);
            let many = ideal_time(k * shots, &a, relax);
            prop_assert!((many - k as f64 * one).abs() <= 1e-12 * many.max(1e-300));
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            let whole = ideal_time(shots, &joined, relax);
            let parts = ideal_time(shots, &a, relax) + ideal_time(shots, &b, relax);
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1e-300));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "ideal_time = {value}, linearity and additivity hold over 2000 cases"
    ))
}

/// The request with `sweepers` and one plain request per grid point.
fn split(
    base: &ExperimentRequest,
    sweepers: Vec<Sweeper>,
) -> (ExperimentRequest, Vec<ExperimentRequest>) {
    let mut plain = base.clone();
    plain.operation_code = OperationCode::ExecutePulseSequence;
    plain.sweepers.clear();
    let points = sweep_grid(&sweepers)
        .assignments
        .iter()
        .map(|a| apply_assignment(&plain, a))
        .collect();
    let mut swept = base.clone();
    swept.operation_code = OperationCode::ExecuteSweeps;
    swept.sweepers = sweepers;
    (swept, points)
}

fn sweep_semantics() -> Outcome {
    let outer = Sweeper::single(Parameter::Amplitude, 0, 0.0, 0.5, 3);
    let inner = Sweeper {
        parameters: vec![Parameter::Frequency, Parameter::RelativePhase],
        indexes: vec![0, 0],
        starts: vec![4.99e9, 0.0],
        stops: vec![5.01e9, 1.5],
        expts: 4,
    };
    let one = sweep_grid(std::slice::from_ref(&outer));
    ensure(one.len() == 3 && one.shape == [3], || {
        format!("(3) grid has shape {:?}", one.shape)
    })?;
    let two = sweep_grid(&[outer.clone(), inner.clone()]);
    ensure(two.len() == 12 && two.shape == [3, 4], || {
        format!("(3,4) grid has shape {:?}", two.shape)
    })?;

    let mut oracle = Vec::new();
    for a in &sweeper_values(&outer)[0] {
        for (f, p) in sweeper_values(&inner)[0]
            .iter()
            .zip(&sweeper_values(&inner)[1])
        {
            oracle.push(vec![
                (Parameter::Amplitude, *a),
                (Parameter::Frequency, *f),
                (Parameter::RelativePhase, *p),
            ]);
        }
    }
    let flattened: Vec<Vec<(Parameter, f64)>> = two
        .assignments
        .iter()
        .map(|a| a.iter().map(|u| (u.parameter, u.value)).collect())
        .collect();
    ensure(flattened == oracle, || {
        "grid differs from the nested-loop oracle".into()
    })?;

    let base = drive_readout(0.3, 200, true);
    let mut singleshot = drive_readout(0.3, 6, false);
    singleshot.sequence.push(readout_pulse(1.5e-6));
    let cases = vec![
        (
            base.clone(),
            vec![Sweeper::single(Parameter::Frequency, 0, 4.99e9, 5.01e9, 25)],
        ),
        (base.clone(), vec![outer.clone(), inner.clone()]),
        (
            base.clone(),
            vec![
                Sweeper::single(Parameter::Bias, 0, 0.0, 0.2, 10),
                Sweeper::single(Parameter::Amplitude, 0, 0.0, 1.0, 10),
            ],
        ),
        (
            base.clone(),
            vec![Sweeper::single(Parameter::Start, 1, 40e-9, 20e-6, 9)],
        ),
        (
            singleshot,
            vec![outer, Sweeper::single(Parameter::Start, 2, 1.2e-6, 3e-6, 4)],
        ),
    ];
    let mut compared = 0;
    for (k, (request, sweepers)) in cases.into_iter().enumerate() {
        let (swept, points) = split(&request, sweepers);
        let rts = local(77)
            .execute(&swept)
            .map_err(|e| format!("case {k}: {e}"))?;
        let mut loop_endpoint = local(77);
        let mut i = Vec::new();
        let mut q = Vec::new();
        for point in &points {
            let r = loop_endpoint
                .execute(point)
                .map_err(|e| format!("case {k}: {e}"))?;
            i.push(r.i().to_vec());
            q.push(r.q().to_vec());
        }
        // regroup point-major results into the readout-major sweep layout
        let readouts = request.readout_count();
        let per = i[0].len() / readouts;
        let mut expected_i = Vec::new();
        let mut expected_q = Vec::new();
        for r in 0..readouts {
            for p in 0..points.len() {
                expected_i.extend_from_slice(&i[p][r * per..(r + 1) * per]);
                expected_q.extend_from_slice(&q[p][r * per..(r + 1) * per]);
            }
        }
        ensure(rts.i() == expected_i && rts.q() == expected_q, || {
            format!(
                "case {k}: sweep of {} points differs from the point loop",
                points.len()
            )
        })?;
        compared += points.len();
    }
    Ok(format!(
        "3 and 12 points outer-first, {compared} swept points equal to their point loops"
    ))
}

fn feature_matrix() -> Outcome {
    let mut endpoint = local(3);
    let base = drive_readout(0.4, 64, true);
    let rejected = [
        (
            Sweeper::single(Parameter::Duration, 0, 20e-9, 80e-9, 5),
            "unsupported sweeper parameter: Duration",
        ),
        (
            Sweeper::single(Parameter::Frequency, 1, 5.79e9, 5.81e9, 5),
            "unsupported sweeper parameter: Frequency on readout pulse",
        ),
    ];
    for (sweeper, expected) in rejected {
        let (swept, _) = split(&base, vec![sweeper]);
        match endpoint.execute(&swept) {
            Err(ClientError::Server(message)) => ensure(message.contains(expected), || {
                format!("got {message:?}, wanted {expected:?}")
            })?,
            other => return Err(format!("{expected}: not rejected ({other:?})")),
        }
    }
    let accepted = [
        Sweeper::single(Parameter::Frequency, 0, 4.99e9, 5.01e9, 5),
        Sweeper::single(Parameter::Amplitude, 0, 0.0, 1.0, 5),
        Sweeper::single(Parameter::RelativePhase, 0, 0.0, 3.0, 5),
        Sweeper::single(Parameter::Start, 1, 40e-9, 1e-6, 5),
        Sweeper::single(Parameter::Bias, 0, 0.0, 0.2, 5),
    ];
    for sweeper in accepted {
        let name = sweeper.parameters[0];
        let (swept, _) = split(&base, vec![sweeper]);
        let result = endpoint
            .execute(&swept)
            .map_err(|e| format!("{name}: {e}"))?;
        ensure(result.shape() == [1, 5], || {
            format!("{name}: shape {:?}", result.shape())
        })?;
    }
    Ok("Duration and readout Frequency rejected by name; Frequency, Amplitude, RelativePhase, Start, Bias execute".into())
}

fn physics_recovery() -> Outcome {
    let model = QubitModel::default();
    let bias = 0.12;
    let card = Runcard::from_model(&model, bias);
    let mut endpoint = local(2024);
    let params = ExperimentParams {
        points: 101,
        shots: 4096,
        ..ExperimentParams::default()
    };
    let estimate = |kind, params: &ExperimentParams, endpoint: &mut LocalEndpoint| {
        let data =
            run_experiment(kind, endpoint, &card, params).map_err(|e| format!("{kind}: {e}"))?;
        analyze(&data)
            .map_err(|e| format!("{kind}: {e}"))?
            .ok_or_else(|| format!("{kind}: no estimate"))
    };

    let t1 = estimate(ExperimentKind::T1, &params, &mut endpoint)?.value;
    let t1_error = (t1 - model.t1).abs() / model.t1;
    ensure(t1_error <= 0.05, || {
        format!("T1 {t1:.4e} is {:.1}% off", 100.0 * t1_error)
    })?;

    let pi = estimate(ExperimentKind::RabiAmplitude, &params, &mut endpoint)?.value;
    let pi_error = (pi - model.pi_amplitude).abs() / model.pi_amplitude;
    ensure(pi_error <= 0.03, || {
        format!("pi amplitude {pi:.4} is {:.1}% off", 100.0 * pi_error)
    })?;

    // scan centered 7 MHz away from the true transition
    let truth = bias_to_frequency(&model, bias);
    let spectroscopy = ExperimentParams {
        drive_center: Some(truth + 7e6),
        ..params.clone()
    };
    let plan_step = 40e6 / (spectroscopy.points - 1) as f64;
    let peak = estimate(
        ExperimentKind::QubitSpectroscopy,
        &spectroscopy,
        &mut endpoint,
    )?
    .value;
    ensure((peak - truth).abs() <= plan_step, || {
        format!("peak {peak:.6e} vs {truth:.6e} (step {plan_step:.3e})")
    })?;
    Ok(format!(
        "T1 {:.3} us ({:+.2}%), pi amplitude {pi:.4} ({:+.2}%), peak {:+.1} kHz from f(bias)",
        t1 * 1e6,
        100.0 * (t1 - model.t1) / model.t1,
        100.0 * (pi - model.pi_amplitude) / model.pi_amplitude,
        (peak - truth) / 1e3
    ))
}

fn assignment_fidelity() -> Outcome {
    // separation for F = 0.95 under Gaussian blobs: F = 1 - erfc(d / (2 sqrt2 sigma)) / 2
    let target = 0.95;
    let ratio = 2.0 * std::f64::consts::SQRT_2 * erfc_inv(2.0 * (1.0 - target));
    ensure((ratio - 3.29).abs() < 0.005, || {
        format!("d/sigma oracle gave {ratio}")
    })?;
    ensure(
        (1.0 - 0.5 * erfc(ratio / (2.0 * std::f64::consts::SQRT_2)) - target).abs() < 1e-9,
        || "erfc oracle is not self-consistent".into(),
    )?;

    let mut model = QubitModel::default();
    let card = Runcard::from_model(&model, 0.0);
    let f = card.readout_frequency;
    let [c0, c1] = [model.blob_center_0, model.blob_center_1];
    let (r0, r1) = (
        model.resonator_response(f, 0),
        model.resonator_response(f, 1),
    );
    let d = ((c1[0] * r1 - c0[0] * r0).powi(2) + (c1[1] * r1 - c0[1] * r0).powi(2)).sqrt();
    model.blob_sigma = d / ratio;

    let params = ExperimentParams {
        points: 1,
        shots: 2500,
        ..ExperimentParams::default()
    };
    let data = run_experiment(
        ExperimentKind::Singleshot,
        &mut local_with(model.clone(), 6),
        &card,
        &params,
    )
    .map_err(|e| e.to_string())?;
    let fidelity = analyze(&data)
        .map_err(|e| e.to_string())?
        .ok_or("no estimate")?
        .value;
    ensure((fidelity - target).abs() <= 0.02, || {
        format!("fidelity {fidelity:.4}")
    })?;
    Ok(format!(
        "d/sigma = {ratio:.4} (sigma {:.4}), fidelity {fidelity:.4} over 5000 shots",
        model.blob_sigma
    ))
}

fn scaling_law() -> Outcome {
    let counts = [1, 10, 100, 1000, 10_000];
    let card = Runcard::from_model(&QubitModel::default(), 0.0);
    let overheads = OverheadModel::default();
    let params = ExperimentParams::default();
    let mut endpoint = local(8);
    let rts = scaling_report(
        ExperimentKind::QubitSpectroscopy,
        &counts,
        &mut endpoint,
        &card,
        &params,
        &overheads,
    )
    .map_err(|e| e.to_string())?;
    let per_point = scaling_report(
        ExperimentKind::ResonatorSpectroscopy,
        &counts,
        &mut endpoint,
        &card,
        &params,
        &overheads,
    )
    .map_err(|e| e.to_string())?;

    for pair in rts.windows(2) {
        ensure(pair[1].ratio <= pair[0].ratio, || {
            format!(
                "RTS ratio rose from {} to {} points",
                pair[0].points, pair[1].points
            )
        })?;
    }
    let (last_rts, last_pp) = (&rts[4], &per_point[4]);
    ensure(last_rts.ratio < 1.2, || {
        format!("RTS ratio at 1e4 is {}", last_rts.ratio)
    })?;
    let advantage = last_pp.ratio / last_rts.ratio;
    ensure(advantage > 10.0, || {
        format!("per-point / RTS at 1e4 is {advantage}")
    })?;

    let rows: Vec<_> = rts.iter().chain(&per_point).cloned().collect();
    let mut csv = Vec::new();
    write_scaling_csv(&rows, &mut csv).map_err(|e| e.to_string())?;
    let parsed = read_scaling_csv(&csv[..]).map_err(|e| e.to_string())?;
    ensure(parsed == rows, || "CSV did not re-parse losslessly".into())?;
    Ok(format!(
        "RTS ratio {:.1} -> {:.4}, per-point {:.2}, advantage {advantage:.1}x at 1e4, CSV round trip exact",
        rts[0].ratio, last_rts.ratio, last_pp.ratio
    ))
}

fn server_robustness() -> Outcome {
    let server = spawn_server(31);
    let client = Client::new(server.addr().to_string());
    let valid_request = drive_readout(0.5, 16, true);
    let valid = wire::encode_request(&valid_request).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut error_envelopes = 0;
    for k in 0..10_000 {
        let bytes = fuzz_payload(&mut rng, &valid);
        if let Ok(response) = client.send_raw(&bytes) {
            match wire::decode_results(&response) {
                Ok(wire::ResponseEnvelope::Error(_)) => error_envelopes += 1,
                Ok(_) => {}
                Err(e) => return Err(format!("payload {k}: undecodable response: {e}")),
            }
        }
    }
    client
        .execute(&valid_request)
        .map_err(|e| format!("after fuzzing: {e}"))?;
    wait_for_records(&server, 10_001);

    let before = server.journal().records().len();
    let workers: Vec<_> = [7u64, 11]
        .into_iter()
        .map(|reps| {
            let client = Client::new(server.addr().to_string());
            thread::spawn(move || {
                (0..25)
                    .map(|_| {
                        client
                            .execute(&drive_readout(0.5, reps, false))
                            .map(|r| r.shape().to_vec())
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
        })
        .collect();
    for (worker, reps) in workers.into_iter().zip([7usize, 11]) {
        let shapes = worker
            .join()
            .map_err(|_| "client thread panicked")?
            .map_err(|e| e.to_string())?;
        ensure(shapes.iter().all(|s| s == &[1, reps]), || {
            format!("client with {reps} reps got a foreign response")
        })?;
    }
    wait_for_records(&server, before + 50);
    let records = server.journal().records().clone();
    ensure(
        records[before..]
            .windows(2)
            .all(|p| p[0].finished <= p[1].started),
        || "executions interleaved".into(),
    )?;

    let phases: Vec<f64> = (0..4).map(|_| measured_phase(&client)).collect();
    let spread = phases
        .iter()
        .map(|p| phase_distance(*p, phases[0]))
        .fold(0.0, f64::max);
    ensure(spread < 0.05, || {
        format!("clock phase drifted by {spread} rad between connections")
    })?;
    let first_phase = server.clock_phase();
    drop(server);
    let restarted = spawn_server(32);
    let moved = phase_distance(restarted.clock_phase(), first_phase);
    let measured = measured_phase(&Client::new(restarted.addr().to_string()));
    ensure(
        moved > 0.1 && phase_distance(measured, restarted.clock_phase()) < 0.05,
        || format!("restart with a new seed kept the clock phase ({moved} rad)"),
    )?;
    Ok(format!(
        "10000 fuzzed payloads ({error_envelopes} error envelopes), 50 overlapping requests serialized, phase spread {spread:.4} rad, restart moved it {moved:.3} rad"
    ))
}

struct Criterion {
    number: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            number: 1,
            name: "wire golden vectors and round trips",
            budget: Some(Duration::from_secs(10)),
            run: wire_vectors,
        },
        Criterion {
            number: 2,
            name: "ideal time exactness",
            budget: None,
            run: ideal_time_exactness,
        },
        Criterion {
            number: 3,
            name: "sweep semantics",
            budget: None,
            run: sweep_semantics,
        },
        Criterion {
            number: 4,
            name: "feature matrix",
            budget: None,
            run: feature_matrix,
        },
        Criterion {
            number: 5,
            name: "physics recovery",
            budget: Some(Duration::from_secs(60)),
            run: physics_recovery,
        },
        Criterion {
            number: 6,
            name: "assignment fidelity",
            budget: None,
            run: assignment_fidelity,
        },
        Criterion {
            number: 7,
            name: "scaling law",
            budget: Some(Duration::from_secs(120)),
            run: scaling_law,
        },
        Criterion {
            number: 8,
            name: "server robustness",
            budget: None,
            run: server_robustness,
        },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|e| {
                let message = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {message}"))
            })
            .and_then(|detail| match c.budget {
                Some(budget) if started.elapsed() > budget => Err(format!(
                    "took {:.1} s, budget {} s",
                    started.elapsed().as_secs_f64(),
                    budget.as_secs()
                )),
                _ => Ok(detail),
            });
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "criterion {} PASS {} ({elapsed:.2} s): {detail}",
                c.number, c.name
            ),
            Err(reason) => {
                failed += 1;
                println!(
                    "criterion {} FAIL {} ({elapsed:.2} s): {reason}",
                    c.number, c.name
                );
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
