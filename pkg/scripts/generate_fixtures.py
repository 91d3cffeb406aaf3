"""Regenerate the built-in scenario documents under ``src/cilqg/scenarios``.

The fixtures are pinned regression inputs; rerun this only when deliberately
changing a layout, and commit the resulting JSON.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "cilqg" / "scenarios"
N = 50
TR = 0.2

MODEL = {
    "type": "bicycle",
    "wheelbase": 2.9,
    "sampling_time": TR,
    "process_noise_cov": [[0.09, 0.0], [0.0, 9e-06]],
    "measurement_noise_cov": np.diag([0.04, 0.04, 0.0025, 0.0001]).tolist(),
}
SIGMA0 = np.diag([0.01, 0.01, 0.01, 1e-4]).tolist()
SOLVER = {"p": 0.98}


def diag(*v):
    return np.diag(v).tolist()


def two_static_obstacles():
    gap = 0.47
    return {
        "name": "two_static_obstacles",
        "description": (
            "Straight 5 m/s reference through a 0.94 m gap between two 6 m x 4 m blocks "
            "(x in [20, 26]) with a 0.15 m shape margin. The seed brakes to a stop before the "
            "blocks. Speed-scaled measurement noise makes slowing down the only way to shrink the "
            "covariance enough to pass."
        ),
        "horizon": N,
        "seed": 0,
        "model": MODEL,
        "initial_belief": {"mean": [0.0, 0.0, 5.0, 0.0], "covariance": SIGMA0},
        "reference": {"kind": "straight", "speed": 5.0, "start": [0.0, 0.0], "heading": 0.0},
        "cost": {"Q": diag(0.5, 20, 1, 5), "R": diag(1, 1), "Qf": diag(5, 200, 10, 50)},
        "control_box": {"lower": [-4.0, -0.5], "upper": [2.0, 0.5]},
        "control_noise_cov": diag(0.01, 1e-4),
        "static_obstacles": [
            {"name": "upper_block", "margin": 0.15,
             "vertices": [[20.0, gap], [26.0, gap], [26.0, gap + 4], [20.0, gap + 4]]},
            {"name": "lower_block", "margin": 0.15,
             "vertices": [[20.0, -gap - 4], [26.0, -gap - 4], [26.0, -gap], [20.0, -gap]]},
        ],
        "initial_controls": {"kind": "piecewise", "segments": [
            {"steps": 20, "value": [-1.25, 0.0]}, {"steps": 30, "value": [0.0, 0.0]}]},
        "solver": SOLVER,
    }


def one_static_obstacle_curved():
    return {
        "name": "one_static_obstacle_curved",
        "description": (
            "Arc reference of curvature 0.05 1/m at 4 m/s, tighter than the 0.1 rad steering "
            "bound allows (about 0.035 1/m), with a 2 m square block just inside the reachable "
            "turn. The seed holds a constant 0.07 rad steering angle."
        ),
        "horizon": N,
        "seed": 0,
        "model": MODEL,
        "initial_belief": {"mean": [0.0, 0.0, 4.0, 0.0], "covariance": SIGMA0},
        "reference": {"kind": "arc", "speed": 4.0, "start": [0.0, 0.0], "heading": 0.0,
                      "curvature": 0.05},
        "cost": {"Q": diag(1, 1, 1, 1), "R": diag(1, 1), "Qf": diag(10, 10, 10, 10)},
        "control_box": {"lower": [-4.0, -0.1], "upper": [2.0, 0.1]},
        "control_noise_cov": diag(0.01, 1e-4),
        "static_obstacles": [
            {"name": "block", "margin": 0.3,
             "vertices": [[19.0, 6.5], [21.0, 6.5], [21.0, 8.5], [19.0, 8.5]]},
        ],
        "initial_controls": {"kind": "constant", "value": [0.0, 0.07]},
        "solver": SOLVER,
    }


def dynamic_overtake():
    t = TR * np.arange(N + 1)
    means = np.column_stack([3.0 * t, np.maximum(-0.5 * t, -1.5)])
    sig = 0.1 + 0.03 * t
    return {
        "name": "dynamic_overtake",
        "description": (
            "Ego at 6 m/s in the lane y = -3 starts 10 m behind a 3 m/s vehicle whose mean "
            "starts at (0, 0) and merges down to y = -1.5 within 3 s. Its position standard "
            "deviation grows linearly from 0.1 m to 0.4 m. The 2 m margin forces the ego to "
            "dip below its lane while overtaking. The seed is a small lane-change manoeuvre."
        ),
        "horizon": N,
        "seed": 0,
        "model": MODEL,
        "initial_belief": {"mean": [-10.0, -3.0, 6.0, 0.0], "covariance": SIGMA0},
        "reference": {"kind": "straight", "speed": 6.0, "start": [-10.0, -3.0], "heading": 0.0},
        "cost": {"Q": diag(0.2, 5, 1, 5), "R": diag(1, 1), "Qf": diag(2, 50, 10, 50)},
        "control_box": {"lower": [-4.0, -0.5], "upper": [2.0, 0.5]},
        "control_noise_cov": diag(0.01, 1e-4),
        "dynamic_obstacles": [
            {"name": "merging_vehicle", "margin": 2.0,
             "means": np.round(means, 12).tolist(),
             "covariances": [diag(s * s, s * s) for s in np.round(sig, 12)]},
        ],
        "initial_controls": {"kind": "piecewise", "segments": [
            {"steps": 5, "value": [0.0, -0.1]}, {"steps": 5, "value": [0.0, 0.1]},
            {"steps": 40, "value": [0.0, 0.0]}]},
        "solver": SOLVER,
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (two_static_obstacles, one_static_obstacle_curved, dynamic_overtake):
        doc = build()
        (OUT / f"{doc['name']}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", doc["name"])


if __name__ == "__main__":
    main()
