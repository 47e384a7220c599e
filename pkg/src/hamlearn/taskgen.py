"""Task sampling and dataset construction.

A task is one physical system: parameters drawn uniformly from the
per-system boxes below, plus train/test sets of exact (x, xdot) pairs.
Meta-test systems come in two observation modes: `points` (K independent
states) and `trajectories` (K short rollouts contributing L samples each,
with derivatives recomputed analytically at the sampled states).  Their
test surface is a full lattice over the sampling region.

Datasets serialize as one CSV per task plus a JSON manifest; floats are
written with repr so a parse round-trips to the exact same doubles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import seeding
from .physics import (DOF, PARAM_NAMES, KEPLER_MIN_SEP_SAMPLE,
                      KEPLER_MIN_SEP_EVAL, IntegrationError, PhysicalParams,
                      field_fn, integrate, true_field_many)

PARAM_RANGES = {
    "spring_mass": ((0.5, 5.0), (0.5, 5.0), (-5.0, 5.0)),
    "pendulum": ((0.5, 5.0), (0.5, 5.0), (-np.pi, np.pi)),
    "kepler": ((0.5, 2.5), (0.5, 2.5), (-2.5, 2.5), (-2.5, 2.5)),
}

STATE_RANGES = {
    "spring_mass": ((-10.0, 10.0), (-10.0, 10.0)),
    "pendulum": ((-2 * np.pi, 2 * np.pi), (-20.0, 20.0)),
    "kepler": ((-5.0, 5.0),) * 4,
}

# lattice resolution per axis for the evaluation grid
GRID_PER_AXIS = {"spring_mass": 50, "pendulum": 50, "kepler": 10}

# a meta-test Kepler system must keep every lattice q-point clear of the
# evaluation guard, with margin
_GRID_CLEARANCE = KEPLER_MIN_SEP_EVAL + 0.05

_REJECT_FACTOR = 1000  # rejection budget multiplier for state sampling

DATASET_FORMAT_VERSION = 1


@dataclass
class Task:
    params: PhysicalParams
    train_x: np.ndarray
    train_xdot: np.ndarray
    test_x: np.ndarray
    test_xdot: np.ndarray


@dataclass
class GridTestSet:
    states: np.ndarray       # (G, 2n) lattice over the sampling region
    derivatives: np.ndarray  # true_field at each lattice point
    per_axis: int


@dataclass
class MetaTestSystem:
    params: PhysicalParams
    train_x: np.ndarray
    train_xdot: np.ndarray
    grid: GridTestSet
    mode: str
    k: int


def sample_params(system: str, rng: np.random.Generator) -> PhysicalParams:
    """Uniform draw from the per-system parameter box."""
    if system not in PARAM_RANGES:
        raise ValueError(f"unknown system {system!r}")
    vals = [rng.uniform(lo, hi) for lo, hi in PARAM_RANGES[system]]
    return PhysicalParams.from_vector(system, vals)


def sample_states(params: PhysicalParams, rng: np.random.Generator,
                  count: int) -> np.ndarray:
    """Uniform states (count, 2n); Kepler rejects |q - q0| < 0.5."""
    if count < 1:
        raise ValueError("count must be >= 1")
    ranges = STATE_RANGES[params.system]
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    if params.system != "kepler":
        return rng.uniform(lo, hi, (count, len(ranges)))
    out = np.empty((count, 4))
    q0 = np.array([params.values["q0x"], params.values["q0y"]])
    have = 0
    budget = _REJECT_FACTOR * count
    while have < count:
        if budget <= 0:
            raise RuntimeError("state sampling rejection budget exceeded")
        draw = rng.uniform(lo, hi, (count - have, 4))
        sep = np.hypot(draw[:, 0] - q0[0], draw[:, 1] - q0[1])
        keep = draw[sep >= KEPLER_MIN_SEP_SAMPLE]
        out[have : have + keep.shape[0]] = keep
        have += keep.shape[0]
        budget -= count - have
    return out


def make_task(params: PhysicalParams, rng: np.random.Generator,
              n_points: int = 50) -> Task:
    """Independent train/test sets of exact (x, xdot) pairs."""
    train_x = sample_states(params, rng, n_points)
    test_x = sample_states(params, rng, n_points)
    return Task(params, train_x, true_field_many(params, train_x),
                test_x, true_field_many(params, test_x))


def make_meta_train(system: str, n_tasks: int = 10000, n_points: int = 50,
                    seed: int = 0) -> list:
    """Meta-train pool; task i is derived from split(seed, TASK, i)."""
    if n_tasks < 1 or n_points < 1:
        raise ValueError("n_tasks and n_points must be >= 1")
    tasks = []
    for i in range(n_tasks):
        rng = seeding.split(seed, seeding.TASK, i)
        tasks.append(make_task(sample_params(system, rng), rng, n_points))
    return tasks


def build_grid(params: PhysicalParams, per_axis: int | None = None) -> GridTestSet:
    """Evenly spaced lattice spanning the sampling region, with true fields."""
    per_axis = per_axis or GRID_PER_AXIS[params.system]
    ranges = STATE_RANGES[params.system]
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in ranges]
    mesh = np.meshgrid(*axes, indexing="ij")
    states = np.stack([m.ravel() for m in mesh], axis=1)
    return GridTestSet(states, true_field_many(params, states), per_axis)


def _grid_safe(params: PhysicalParams, per_axis: int) -> bool:
    """Kepler only: is every lattice q-point clear of the 1/r guard?"""
    if params.system != "kepler":
        return True
    lo, hi = STATE_RANGES["kepler"][0]
    axis = np.linspace(lo, hi, per_axis)
    qx, qy = np.meshgrid(axis, axis, indexing="ij")
    sep = np.hypot(qx - params.values["q0x"], qy - params.values["q0y"])
    return bool(sep.min() >= _GRID_CLEARANCE)


def _sample_trajectory_pairs(params: PhysicalParams, rng: np.random.Generator,
                             K: int, L: int, T_span: float):
    """K short rollouts, L samples each; analytic labels at sampled states."""
    xs = []
    f = field_fn(params)
    for _ in range(K):
        for attempt in range(50):
            x0 = sample_states(params, rng, 1)[0]
            try:
                _, X = integrate(f, x0, T_span, L)
            except IntegrationError:
                continue  # blow-up: draw a fresh initial state
            if params.system == "kepler":
                q0 = np.array([params.values["q0x"], params.values["q0y"]])
                sep = np.hypot(X[:, 0] - q0[0], X[:, 1] - q0[1])
                if sep.min() < KEPLER_MIN_SEP_SAMPLE:
                    continue  # passed too close: these are training points
            xs.append(X)
            break
        else:
            raise RuntimeError("trajectory resampling budget exceeded")
    states = np.vstack(xs)
    return states, true_field_many(params, states)


def make_meta_test(system: str, mode: str, K: int, rng: np.random.Generator,
                   L: int = 5, T_span: float = 1.0,
                   per_axis: int | None = None) -> MetaTestSystem:
    """One held-out system: K-shot observations plus the lattice test set.

    points mode: K independent (x, xdot) pairs.  trajectories mode: K
    rollouts over T_span seconds sampled at t_k = k*T/L, so K*L pairs.
    """
    if mode not in ("points", "trajectories"):
        raise ValueError(f"mode must be points|trajectories, got {mode!r}")
    if K < 1:
        raise ValueError("K must be >= 1")
    per_axis = per_axis or GRID_PER_AXIS[system]
    for attempt in range(200):
        params = sample_params(system, rng)
        if _grid_safe(params, per_axis):
            break
    else:
        raise RuntimeError("could not sample grid-safe system parameters")
    if mode == "points":
        train_x = sample_states(params, rng, K)
        train_xdot = true_field_many(params, train_x)
    else:
        train_x, train_xdot = _sample_trajectory_pairs(params, rng, K, L, T_span)
    return MetaTestSystem(params, train_x, train_xdot,
                          build_grid(params, per_axis), mode, K)


def make_meta_test_suite(system: str, mode: str, K: int, seed: int,
                         n_systems: int = 10, **kw) -> list:
    """The held-out systems used by one evaluation, independently seeded."""
    return [make_meta_test(system, mode, K,
                           seeding.split(seed, seeding.TEST_SYSTEM, i), **kw)
            for i in range(n_systems)]


# -- serialization -------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _task_header(system: str) -> list:
    n = DOF[system]
    cols = ["split"]
    cols += list(PARAM_NAMES[system])
    cols += [f"q{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)]
    cols += [f"qdot{i+1}" for i in range(n)] + [f"pdot{i+1}" for i in range(n)]
    return cols


def write_dataset(path: str, system: str, seed: int, tasks: list) -> None:
    """Dataset directory: manifest.json + tasks/task_<i>.csv."""
    os.makedirs(os.path.join(path, "tasks"), exist_ok=True)
    n_points = int(tasks[0].train_x.shape[0]) if tasks else 0
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "system": system,
        "seed": int(seed),
        "n_tasks": len(tasks),
        "n_points": n_points,
        "param_names": list(PARAM_NAMES[system]),
        "param_ranges": [[float(a), float(b)] for a, b in PARAM_RANGES[system]],
        "state_ranges": [[float(a), float(b)] for a, b in STATE_RANGES[system]],
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    header = ",".join(_task_header(system))
    for i, task in enumerate(tasks):
        lines = [header]
        pvals = [_fmt(v) for v in task.params.as_vector()]
        for split_name, X, Xd in (("train", task.train_x, task.train_xdot),
                                  ("test", task.test_x, task.test_xdot)):
            for row in range(X.shape[0]):
                cells = [split_name] + pvals
                cells += [_fmt(v) for v in X[row]]
                cells += [_fmt(v) for v in Xd[row]]
                lines.append(",".join(cells))
        fname = os.path.join(path, "tasks", f"task_{i:05d}.csv")
        with open(fname, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def load_dataset(path: str):
    """Read back (manifest, tasks); exact float round-trip."""
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError("unsupported dataset format version")
    system = manifest["system"]
    n = DOF[system]
    n_par = len(PARAM_NAMES[system])
    tasks = []
    task_dir = os.path.join(path, "tasks")
    for i in range(manifest["n_tasks"]):
        fname = os.path.join(task_dir, f"task_{i:05d}.csv")
        with open(fname) as fh:
            lines = fh.read().strip().split("\n")
        if lines[0] != ",".join(_task_header(system)):
            raise ValueError(f"unexpected header in {fname}")
        rows = {"train": [], "test": []}
        pvec = None
        for line in lines[1:]:
            cells = line.split(",")
            pvec = [float(c) for c in cells[1 : 1 + n_par]]
            rows[cells[0]].append([float(c) for c in cells[1 + n_par :]])
        params = PhysicalParams.from_vector(system, pvec)
        tr = np.array(rows["train"])
        te = np.array(rows["test"])
        tasks.append(Task(params, tr[:, : 2 * n], tr[:, 2 * n :],
                          te[:, : 2 * n], te[:, 2 * n :]))
    return manifest, tasks
