"""Smoke test for the rfsoc_sequencer extension module.

Build and install it first:
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/rfsoc_sequencer-*.whl
then run `python python/smoke_test.py` from the repository root.
"""

import json
import pathlib
import sys

import rfsoc_sequencer as rs

GOLDEN = pathlib.Path(__file__).resolve().parent.parent / "golden"


def check(condition, message):
    if not condition:
        sys.exit(f"FAIL: {message}")
    print(f"ok   {message}")


def main():
    check(rs.frame(b"{}") == bytes.fromhex("000000027b7d"), "frame of {} is 00 00 00 02 7b 7d")
    check(rs.ideal_time(4096, [2e-6], 300e-6) == 1.236992, "ideal_time(4096, [2 us], 300 us) = 1.236992")

    for path in sorted((GOLDEN / "requests").glob("*.json")):
        payload = path.read_bytes()
        request = rs.ExperimentRequest.from_dict(json.loads(payload))
        check(request.encode() == payload, f"golden request {path.stem} re-encodes byte for byte")

    sweep = rs.ExperimentRequest.from_json((GOLDEN / "requests" / "sweep_frequency.json").read_text())
    with rs.Server(seed=1) as server:
        result = rs.Client(server.address).execute(sweep)
        check(result.shape == [1, 11], f"sweep over TCP returns shape {result.shape}")

        bad = json.loads(sweep.to_json())
        bad["sweepers"][0]["parameters"] = ["duration"]
        try:
            rs.Client(server.address).execute(rs.ExperimentRequest.from_dict(bad))
            check(False, "duration sweep rejected")
        except rs.ServerError as error:
            check("Duration" in str(error), f"duration sweep rejected: {error}")

        data = rs.run_experiment("RabiAmplitude", points=51, shots=1024, server=server.address)
        name, value = data["estimate"]
        check(abs(value - 0.5) < 0.015, f"{name} = {value:.4f}")

    rows = rs.scaling_report("QubitSpectroscopy", [1, 10, 100], shots=256)
    ratios = [row["ratio"] for row in rows]
    check(ratios == sorted(ratios, reverse=True), f"sweep overhead ratio falls with points: {ratios}")


if __name__ == "__main__":
    main()
