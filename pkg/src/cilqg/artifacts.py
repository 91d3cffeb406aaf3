"""Plot-ready run artifacts: delimited text with unit-bearing headers plus JSON.

Every writer is deterministic. Floats go through ``repr`` in JSON and a
fixed ``.12g`` format in CSV, and no wall-clock quantity is written. So two
plans of the same scenario produce byte-identical directories.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constraints import signed_distance_batch
from .types import Belief, confidence_ellipse

STATE_COLUMNS = ("px[m]", "py[m]", "v[m/s]", "theta[rad]")
CONTROL_COLUMNS = ("a[m/s^2]", "delta[rad]")
STATE_SHORT = ("px", "py", "v", "theta")
STATE_UNITS = ("m", "m", "m/s", "rad")
ELLIPSE_POINTS = 64
POLICY_FILE = "policy.json"


def fmt_float(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        return ""
    return format(x, ".12g")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def clearances(scenario, states) -> tuple[list[str], np.ndarray]:
    """Distance from each planned position to each obstacle, shape (N+1, obstacles).

    Static obstacles use the signed distance to the polygon; dynamic obstacles
    use the distance to the predicted mean. Margins are not subtracted.
    """
    X = np.asarray(states, dtype=float)
    pos = X[:, :2]
    names, cols = [], []
    for i, poly in enumerate(scenario.static_obstacles):
        phi, _ = signed_distance_batch(poly.vertices, pos)
        names.append(poly.name or f"static{i}")
        cols.append(phi)
    for i, obs in enumerate(scenario.dynamic_obstacles):
        d = np.hypot(*(pos - obs.means[: X.shape[0]]).T)
        names.append(obs.name or f"dynamic{i}")
        cols.append(d)
    arr = np.column_stack(cols) if cols else np.zeros((X.shape[0], 0))
    return names, arr


def min_clearance(scenario, states) -> float:
    _, arr = clearances(scenario, states)
    return float(arr.min()) if arr.size else math.inf


def box_excess(scenario, controls) -> float:
    """Largest amount by which any control leaves the raw (untightened) box; negative inside."""
    box = scenario.box
    if box is None:
        return -math.inf
    U = np.asarray(controls, dtype=float)
    return float(np.max(np.concatenate([(U - box.upper).ravel(), (box.lower - U).ravel()])))


def plan_summary(scenario, plan, seed: int) -> dict:
    """Scenario-level facts about a plan, free of timing."""
    diag = plan.diagnostics
    names, clear = clearances(scenario, plan.states)
    return _jsonable({
        "scenario": scenario.name,
        "mode": plan.mode,
        "status": plan.status,
        "converged": bool(plan.converged),
        "feasible": bool(plan.feasible),
        "seed": int(seed),
        "p": scenario.settings.p,
        "horizon": plan.horizon,
        "sampling_time[s]": scenario.params.sampling_time,
        "total_cost": plan.cost,
        "max_constraint_value": plan.max_constraint_value,
        "min_clearance[m]": float(clear.min()) if clear.size else None,
        "min_clearance_by_obstacle[m]": {n: float(clear[:, j].min()) for j, n in enumerate(names)},
        "max_box_excess_raw": box_excess(scenario, plan.controls) if scenario.box is not None else None,
        "max_box_excess_tightened": (float(plan.control_constraint_values.max())
                                     if plan.control_constraint_values.size else None),
        "terminal_state": dict(zip(STATE_COLUMNS, plan.states[-1])),
        "outer_iterations": diag.get("outer_iterations"),
        "inner_iterations": diag.get("inner_iterations"),
        "recovered": diag.get("recovered", False),
        "backend": diag.get("backend"),
    })


def write_plan_artifacts(out_dir, scenario, plan, seed: int = 0) -> list[Path]:
    """Write the full artifact set for ``plan`` into ``out_dir``; returns the files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    X = np.asarray(plan.states)
    U = np.asarray(plan.controls)
    N = U.shape[0]
    tr = float(scenario.params.sampling_time)
    ref = np.asarray(scenario.reference)[: N + 1]
    files = []

    def blank_controls(k):
        return [fmt_float(v) for v in U[k]] if k < N else ["", ""]

    path = out / "plan.csv"
    rows = [[k, fmt_float(k * tr), *map(fmt_float, X[k]), *blank_controls(k), *map(fmt_float, ref[k])] for k in range(N + 1)]
    write_csv(path, ["step", "time[s]", *STATE_COLUMNS, *CONTROL_COLUMNS,
                      *(f"ref_{c}" for c in STATE_COLUMNS)], rows)
    files.append(path)

    path = out / "speed.csv"
    write_csv(path, ["step", "time[s]", "v[m/s]", "ref_v[m/s]"],
               [[k, fmt_float(k * tr), fmt_float(X[k, 2]), fmt_float(ref[k, 2])] for k in range(N + 1)])
    files.append(path)

    path = out / "covariance.csv"
    pairs = [(i, j) for i in range(4) for j in range(i, 4)]
    header = ["step"]
    for prefix in ("planned", "belief"):
        header += [f"{prefix}_{STATE_SHORT[i]}_{STATE_SHORT[j]}[{STATE_UNITS[i]}*{STATE_UNITS[j]}]"
                   for i, j in pairs]
    rows = []
    for k in range(N + 1):
        row = [k]
        for covs in (plan.covariances, plan.belief_covariances):
            row += [fmt_float(covs[k][i, j]) for i, j in pairs]
        rows.append(row)
    write_csv(path, header, rows)
    files.append(path)

    path = out / "ellipses.csv"
    p = scenario.settings.p
    rows = []
    for k in range(N + 1):
        ell = confidence_ellipse(Belief(X[k], plan.belief_covariances[k]), p)
        for i, pt in enumerate(ell.polyline(ELLIPSE_POINTS)):
            rows.append([k, i, fmt_float(pt[0]), fmt_float(pt[1])])
    write_csv(path, ["step", "point", "x[m]", "y[m]"], rows)
    files.append(path)

    path = out / "constraints.csv"
    cs = plan.constraints
    sv = plan.state_constraint_values
    cv = plan.control_constraint_values
    rows = [[k, *map(fmt_float, sv[k]), *(map(fmt_float, cv[k]) if k < N else [""] * cv.shape[1])]
            for k in range(N + 1)]
    write_csv(path, ["step", *(f"{n}[m]" for n in cs.state_names),
                      *(f"{n}[{'m/s^2' if n.startswith('u0') else 'rad'}]" for n in cs.control_names)], rows)
    files.append(path)

    path = out / POLICY_FILE
    _write_json(path, _jsonable({
        "scenario": scenario.name,
        "mode": plan.mode,
        "horizon": N,
        "state_order": list(STATE_COLUMNS),
        "control_order": list(CONTROL_COLUMNS),
        "states": X,
        "controls": U,
        "feedforward": plan.k_ff,
        "feedback_gains": plan.K_fb,
        "kalman_gains": plan.kalman_gains,
    }))
    files.append(path)

    path = out / "summary.json"
    _write_json(path, plan_summary(scenario, plan, seed))
    files.append(path)
    return files


def write_failure_summary(out_dir, scenario, mode: str, status: str, message: str, seed: int = 0) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.json"
    _write_json(path, {"scenario": scenario.name, "mode": mode, "status": status,
                       "converged": False, "feasible": False, "seed": int(seed), "message": message})
    return path


@dataclass(frozen=True)
class StoredPolicy:
    """The executable part of a plan, as read back from ``policy.json``."""

    scenario: str
    mode: str
    states: np.ndarray
    controls: np.ndarray
    k_ff: np.ndarray
    K_fb: np.ndarray
    kalman_gains: np.ndarray


def load_policy(plan_dir) -> StoredPolicy:
    """Read ``policy.json`` from a plan directory (raises ``FileNotFoundError``/``ValueError``)."""
    doc = json.loads((Path(plan_dir) / POLICY_FILE).read_text())
    try:
        pol = StoredPolicy(
            scenario=doc["scenario"], mode=doc["mode"],
            states=np.asarray(doc["states"], dtype=float),
            controls=np.asarray(doc["controls"], dtype=float),
            k_ff=np.asarray(doc["feedforward"], dtype=float),
            K_fb=np.asarray(doc["feedback_gains"], dtype=float),
            kalman_gains=np.asarray(doc["kalman_gains"], dtype=float),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed {POLICY_FILE}: {exc}") from None
    N = pol.controls.shape[0]
    if pol.states.shape != (N + 1, 4) or pol.K_fb.shape != (N, 2, 4) or pol.kalman_gains.shape != (N + 1, 4, 4):
        raise ValueError(f"{POLICY_FILE} arrays are not length-consistent")
    return pol


def write_validation_report(out_dir, stats, threshold: float, passed: bool) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(stats.state_violation_rate.shape[0]):
        for j, name in enumerate(stats.state_names):
            rows.append([k, name, "state", fmt_float(stats.state_violation_rate[k, j]),
                         fmt_float(stats.state_standard_error[k, j])])
    for k in range(stats.control_violation_rate.shape[0]):
        for j, name in enumerate(stats.control_names):
            rows.append([k, name, "control", fmt_float(stats.control_violation_rate[k, j]),
                         fmt_float(stats.control_standard_error[k, j])])
    table = out / "violations.csv"
    write_csv(table, ["step", "constraint", "kind", "violation_rate[-]", "standard_error[-]"], rows)
    summary = out / "validation.json"
    _write_json(summary, _jsonable({
        "trials": stats.trials,
        "seed": stats.seed,
        "threshold": threshold,
        "passed": bool(passed),
        "max_state_violation_rate": stats.max_state_violation_rate,
        "max_control_violation_rate": stats.max_control_violation_rate,
        "max_violation_rate": stats.max_violation_rate,
        "collision_rate": stats.collision_rate,
        "mean_closed_loop_cost": stats.mean_cost,
    }))
    return [table, summary]


__all__ = [
    "ELLIPSE_POINTS", "StoredPolicy", "box_excess", "clearances", "fmt_float", "write_csv", "load_policy", "min_clearance",
    "plan_summary", "write_failure_summary", "write_plan_artifacts", "write_validation_report",
]
