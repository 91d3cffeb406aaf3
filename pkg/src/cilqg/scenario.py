"""Scenario documents: schema validation, reference generation and built-in fixtures."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.interpolate import CubicSpline

from .constraints import ControlBox, ConvexPolygonObstacle, UncertainObstacleState, polygons_overlap
from .errors import BadParams, CILQGError, InvariantError, SchemaError
from .models import BicycleParams
from .solver import SolverSettings

BUILTIN_NAMES = ("two_static_obstacles", "one_static_obstacle_curved", "dynamic_overtake")


@dataclass(frozen=True)
class Scenario:
    """A fully validated planning problem."""

    name: str
    params: BicycleParams
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    reference: np.ndarray  # (N+1, 4)
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    initial_controls: np.ndarray  # (N, 2)
    settings: SolverSettings
    static_obstacles: tuple = ()
    dynamic_obstacles: tuple = ()
    box: ControlBox | None = None
    control_cov: np.ndarray | None = None
    description: str = ""
    seed: int = 0
    document: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def horizon(self) -> int:
        return self.initial_controls.shape[0]

    def with_settings(self, **changes) -> "Scenario":
        return replace(self, settings=replace(self.settings, **changes))

    def without_noise(self) -> "Scenario":
        """Same problem with every covariance zeroed.

        This covers process, measurement, initial, control and obstacle-prediction uncertainty.
        """
        params = replace(self.params, process_noise_cov=np.zeros((2, 2)),
                         measurement_noise_cov=np.zeros((4, 4)))
        dyn = tuple(replace(o, covariances=np.zeros_like(o.covariances)) for o in self.dynamic_obstacles)
        return replace(self, params=params, initial_cov=np.zeros((4, 4)), dynamic_obstacles=dyn,
                       control_cov=None if self.control_cov is None else np.zeros((2, 2)))


@lru_cache(maxsize=1)
def scenario_schema() -> dict:
    """The published JSON schema for scenario documents."""
    text = resources.files("cilqg").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _validate_schema(doc) -> None:
    validator = jsonschema.Draft202012Validator(scenario_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if not errors:
        return
    err = errors[0]
    parts = list(err.path)
    if err.validator == "required" and isinstance(err.instance, dict):
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            parts.append(missing[0])
            raise SchemaError(f"missing required field '{_path(parts)}'", _path(parts))
    raise SchemaError(f"{_path(parts)}: {err.message}", _path(parts))


def _matrix(value, shape, path) -> np.ndarray:
    try:
        a = np.asarray(value, dtype=float)
    except ValueError:
        raise SchemaError(f"{path}: ragged array", path) from None
    if a.shape != tuple(shape):
        raise SchemaError(f"{path}: expected shape {tuple(shape)}, got {a.shape}", path)
    if not np.all(np.isfinite(a)):
        raise SchemaError(f"{path}: non-finite entries", path)
    return a


def _psd(a: np.ndarray, path: str) -> np.ndarray:
    if not np.allclose(a, a.T, atol=1e-12, rtol=0):
        raise InvariantError(f"{path} must be symmetric")
    if a.size and np.linalg.eigvalsh(a).min() < -1e-9:
        raise InvariantError(f"{path} must be positive semidefinite")
    return 0.5 * (a + a.T)


def generate_reference(kind: str, params: dict) -> np.ndarray:
    """Kinematically consistent reference states ``(px, py, v, theta)`` sampled at ``dt``.

    ``params`` holds ``N`` and ``dt`` plus, by kind:

    * ``straight``: ``speed``, optional ``start`` and ``heading``
    * ``arc``: as straight plus ``curvature``
    * ``waypoint-spline``: ``waypoints`` and either ``speed`` or ``times``
      (per-waypoint arrival times; the curve passes through each waypoint at its time)
    """
    try:
        N = int(params["N"])
        dt = float(params["dt"])
    except (KeyError, TypeError, ValueError):
        raise BadParams("reference parameters need integer N and float dt") from None
    if N < 1 or not dt > 0:
        raise BadParams("N must be >= 1 and dt > 0")
    t = dt * np.arange(N + 1)
    start = np.asarray(params.get("start", (0.0, 0.0)), dtype=float)
    heading = float(params.get("heading", 0.0))

    if kind in ("straight", "arc"):
        speed = float(params.get("speed", math.nan))
        if not speed >= 0:
            raise BadParams("speed must be a non-negative number")
        kappa = float(params.get("curvature", 0.0)) if kind == "arc" else 0.0
        s = speed * t
        th = heading + kappa * s
        if abs(kappa) < 1e-12:
            px = start[0] + s * math.cos(heading)
            py = start[1] + s * math.sin(heading)
        else:
            px = start[0] + (np.sin(th) - math.sin(heading)) / kappa
            py = start[1] - (np.cos(th) - math.cos(heading)) / kappa
        return np.column_stack([px, py, np.full(N + 1, speed), th])

    if kind == "waypoint-spline":
        wp = np.asarray(params.get("waypoints", ()), dtype=float)
        if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 2:
            raise BadParams("waypoints must be at least two (x, y) pairs")
        if "times" in params:
            times = np.asarray(params["times"], dtype=float)
            if times.shape != (wp.shape[0],):
                raise BadParams("times must give one arrival time per waypoint")
        else:
            speed = float(params.get("speed", math.nan))
            if not speed > 0:
                raise BadParams("waypoint-spline needs a positive speed or explicit times")
            chord = np.r_[0.0, np.cumsum(np.hypot(*np.diff(wp, axis=0).T))]
            times = chord / speed
        if np.any(np.diff(times) <= 0):
            raise BadParams("waypoint times must be strictly increasing")
        spline = CubicSpline(times - times[0], wp, axis=0, bc_type="natural")
        pos = spline(t)
        vel = spline(t, 1)
        return np.column_stack([pos, np.hypot(vel[:, 0], vel[:, 1]),
                                np.unwrap(np.arctan2(vel[:, 1], vel[:, 0]))])

    raise BadParams(f"unknown reference kind {kind!r}")


def _reference(doc: dict, N: int, dt: float) -> np.ndarray:
    kind = doc["kind"]
    if kind == "explicit":
        if "states" not in doc:
            raise SchemaError("missing required field 'reference.states'", "reference.states")
        ref = np.asarray(doc["states"], dtype=float)
        if ref.ndim != 2 or ref.shape[1] != 4:
            raise SchemaError("reference.states must be rows of (px, py, v, theta)", "reference.states")
        if ref.shape[0] < N + 1:
            raise InvariantError(f"reference has {ref.shape[0]} states, needs at least N+1 = {N + 1}")
        return ref[: N + 1]
    params = {k: v for k, v in doc.items() if k != "kind"}
    params.update(N=N, dt=dt)
    try:
        return generate_reference(kind, params)
    except BadParams as exc:
        raise SchemaError(f"reference: {exc}", "reference") from None


def _initial_controls(doc: dict, N: int) -> np.ndarray:
    kind = doc["kind"]
    path = "initial_controls"
    if kind == "constant":
        if "value" not in doc:
            raise SchemaError(f"missing required field '{path}.value'", f"{path}.value")
        return np.tile(_matrix(doc["value"], (2,), f"{path}.value"), (N, 1))
    if kind == "explicit":
        if "values" not in doc:
            raise SchemaError(f"missing required field '{path}.values'", f"{path}.values")
        return _matrix(doc["values"], (N, 2), f"{path}.values")
    segs = doc.get("segments")
    if not segs:
        raise SchemaError(f"missing required field '{path}.segments'", f"{path}.segments")
    rows = [np.tile(_matrix(s["value"], (2,), f"{path}.segments[{i}].value"), (s["steps"], 1))
            for i, s in enumerate(segs)]
    U = np.vstack(rows)
    if U.shape[0] < N:
        U = np.vstack([U, np.tile(U[-1], (N - U.shape[0], 1))])
    return U[:N]


def _load_document(document) -> dict:
    if isinstance(document, dict):
        return document
    if isinstance(document, Path):
        return json.loads(document.read_text())
    if isinstance(document, str):
        text = document.strip()
        if text.startswith("{"):
            return json.loads(text)
        return json.loads(Path(document).read_text())
    raise SchemaError("scenario must be a mapping, JSON text or a path", "<root>")


def load_scenario(document) -> Scenario:
    """Validate a scenario document (mapping, JSON text or file path) and build a :class:`Scenario`.

    Raises :class:`SchemaError` naming the offending field, or
    :class:`InvariantError` for semantic problems such as overlapping obstacles.
    """
    try:
        doc = _load_document(document)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", "<root>") from None
    _validate_schema(doc)
    N = doc["horizon"]
    m = doc["model"]
    try:
        params = BicycleParams(
            wheelbase=m["wheelbase"], sampling_time=m["sampling_time"],
            process_noise_cov=_psd(_matrix(m["process_noise_cov"], (2, 2), "model.process_noise_cov"),
                                   "model.process_noise_cov"),
            measurement_noise_cov=_psd(_matrix(m["measurement_noise_cov"], (4, 4),
                                               "model.measurement_noise_cov"), "model.measurement_noise_cov"),
        )
    except SchemaError:
        raise
    except CILQGError as exc:
        raise InvariantError(f"model: {exc}") from None
    ib = doc["initial_belief"]
    mean = _matrix(ib["mean"], (4,), "initial_belief.mean")
    cov = _psd(_matrix(ib["covariance"], (4, 4), "initial_belief.covariance"), "initial_belief.covariance")
    c = doc["cost"]
    Q = _psd(_matrix(c["Q"], (4, 4), "cost.Q"), "cost.Q")
    R = _psd(_matrix(c["R"], (2, 2), "cost.R"), "cost.R")
    Qf = _psd(_matrix(c["Qf"], (4, 4), "cost.Qf"), "cost.Qf")
    if np.linalg.eigvalsh(R).min() <= 0:
        raise InvariantError("cost.R must be positive definite")
    reference = _reference(doc["reference"], N, params.sampling_time)
    U0 = _initial_controls(doc["initial_controls"], N)
    if np.any(np.abs(U0[:, 1]) >= 0.5 * math.pi):
        raise InvariantError("initial steering angles must lie strictly inside (-pi/2, pi/2)")

    box = None
    if "control_box" in doc:
        b = doc["control_box"]
        try:
            box = ControlBox(_matrix(b["lower"], (2,), "control_box.lower"),
                             _matrix(b["upper"], (2,), "control_box.upper"))
        except CILQGError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise InvariantError(f"control_box: {exc}") from None
    ucov = None
    if "control_noise_cov" in doc:
        ucov = _psd(_matrix(doc["control_noise_cov"], (2, 2), "control_noise_cov"), "control_noise_cov")

    statics = []
    for i, o in enumerate(doc.get("static_obstacles", [])):
        path = f"static_obstacles[{i}]"
        verts = _matrix(o["vertices"], (len(o["vertices"]), 2), f"{path}.vertices")
        try:
            statics.append(ConvexPolygonObstacle(verts, margin=o.get("margin", 0.0),
                                                 name=o.get("name", f"static{i}")))
        except CILQGError as exc:
            raise InvariantError(f"{path}: {exc}") from None
    for i in range(len(statics)):
        for j in range(i + 1, len(statics)):
            if polygons_overlap(statics[i].vertices, statics[j].vertices):
                raise InvariantError(
                    f"static obstacles {statics[i].name!r} and {statics[j].name!r} overlap; "
                    "the convex feasible set is only guaranteed non-empty for disjoint obstacles"
                )

    dynamics = []
    for i, o in enumerate(doc.get("dynamic_obstacles", [])):
        path = f"dynamic_obstacles[{i}]"
        n = len(o["means"])
        if n < N + 1:
            raise InvariantError(f"{path} has {n} steps, needs at least N+1 = {N + 1}")
        means = _matrix(o["means"], (n, 2), f"{path}.means")
        covs = _matrix(o["covariances"], (n, 2, 2), f"{path}.covariances")
        try:
            dynamics.append(UncertainObstacleState(means, covs, margin=o.get("margin", 0.0),
                                                   name=o.get("name", f"dynamic{i}")))
        except CILQGError as exc:
            raise InvariantError(f"{path}: {exc}") from None

    try:
        settings = SolverSettings(**doc.get("solver", {}))
    except CILQGError as exc:
        raise InvariantError(f"solver: {exc}") from None

    return Scenario(
        name=doc["name"], description=doc.get("description", ""), params=params,
        initial_mean=mean, initial_cov=cov, reference=reference, Q=Q, R=R, Qf=Qf,
        initial_controls=U0, settings=settings, static_obstacles=tuple(statics),
        dynamic_obstacles=tuple(dynamics), box=box, control_cov=ucov, seed=int(doc.get("seed", 0)),
        document=doc,
    )


def builtin_document(name: str) -> dict:
    """Raw JSON document of a built-in scenario."""
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown built-in scenario {name!r}; choose from {BUILTIN_NAMES}")
    return json.loads(resources.files("cilqg").joinpath(f"scenarios/{name}.json").read_text())


def builtin_scenario(name: str) -> Scenario:
    return load_scenario(builtin_document(name))


def builtin_scenarios() -> dict[str, Scenario]:
    """The three pinned experiment fixtures keyed by name."""
    return {name: builtin_scenario(name) for name in BUILTIN_NAMES}


def resolve_scenario(arg: str) -> Scenario:
    """Load a scenario from a file path or a built-in name."""
    if arg in BUILTIN_NAMES and not Path(arg).exists():
        return builtin_scenario(arg)
    path = Path(arg)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {arg}")
    return load_scenario(path)


__all__ = [
    "BUILTIN_NAMES", "Scenario", "builtin_document", "builtin_scenario", "builtin_scenarios",
    "generate_reference", "load_scenario", "resolve_scenario", "scenario_schema",
]
