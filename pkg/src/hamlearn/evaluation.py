"""Meta-test evaluation: grid MSEs, adaptation protocols, rollouts, ablations.

Adaptation at evaluation time uses Adam (lr 0.002, 10 steps by default) and
respects the learner's update set, so head-only learners stay head-only at
test time.  Energy error along a rollout is always measured with the TRUE
Hamiltonian on both trajectories: the learned one is only defined up to an
additive constant, so comparing H_theta against H_true directly would be
meaningless.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import fastops, seeding
from .metalearn import (AdamState, InnerConfig, LearnerDef, OuterConfig,
                        adam_init, adam_update, build_learner, meta_train,
                        pretrain, pretrain_budget)
from .network import init_params, update_mask
from .physics import (DomainError, IntegrationError, PhysicalParams, field_fn,
                      hamiltonian_many, integrate, sample_times)
from .taskgen import GridTestSet, make_meta_test_suite, make_meta_train

ADAPT_STEPS = 10
ADAPT_LR = 0.002

# rollouts run at the data-generation tolerances so that integrator noise
# sits far below the 1e-10 scale the reports are read at
ROLLOUT_RTOL = 1e-8
ROLLOUT_ATOL = 1e-10


@dataclass(frozen=True)
class EvalReport:
    learner: str
    system: str
    mode: str
    k: int
    mse_mean: float
    mse_std: float
    n_systems: int
    adapt_steps: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass(frozen=True)
class RolloutReport:
    times: np.ndarray
    state_mse: np.ndarray
    energy_mse: np.ndarray
    failure_time: float | None = None


def field_mse(spec, params, loss_kind: str, grid: GridTestSet) -> float:
    """Mean squared field error over the evaluation lattice."""
    if grid.states.shape[0] == 0:
        raise ValueError("empty grid")
    F = fastops.predicted_field(spec, params, grid.states, loss_kind)
    R = F - grid.derivatives
    return float(np.mean(np.sum(R * R, axis=1)))


def adapt_params(learner: LearnerDef, theta, X, Xdot,
                 steps: int = ADAPT_STEPS, lr: float = ADAPT_LR) -> np.ndarray:
    """Adam-adapt a copy of theta on one system's observations."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    theta = np.array(theta, np.float64)
    mask = update_mask(learner.spec, learner.inner.update_set)
    sub = theta[mask]
    adam = adam_init(sub.size)
    for _ in range(steps):
        _, grad = fastops.loss_grad(learner.spec, theta, X, Xdot,
                                    learner.loss_kind)
        sub, adam = adam_update(adam, sub, grad[mask], lr)
        theta[mask] = sub
    return theta


def adapt_and_eval(learner: LearnerDef, theta_meta, systems,
                   adapt_steps: int = ADAPT_STEPS,
                   adapt_lr: float = ADAPT_LR) -> EvalReport:
    """Adapt to each held-out system, score on its grid, aggregate.

    theta_meta is never mutated; each system adapts its own copy.  The
    reported spread is the population std of the per-system MSEs.
    """
    if len(systems) == 0:
        raise ValueError("no meta-test systems")
    per = []
    for s in systems:
        th = adapt_params(learner, theta_meta, s.train_x, s.train_xdot,
                          adapt_steps, adapt_lr)
        per.append(field_mse(learner.spec, th, learner.loss_kind, s.grid))
    per = np.asarray(per)
    return EvalReport(learner.kind, systems[0].params.system, systems[0].mode,
                      int(systems[0].k), float(per.mean()), float(per.std()),
                      len(systems), int(adapt_steps))


def learning_curve(learner: LearnerDef, theta_meta, systems,
                   max_steps: int = 50, adapt_lr: float = ADAPT_LR) -> np.ndarray:
    """Mean grid MSE after 0..max_steps adaptation steps (length max_steps+1)."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    mask = update_mask(learner.spec, learner.inner.update_set)
    curves = np.empty((len(systems), max_steps + 1))
    for i, s in enumerate(systems):
        theta = np.array(theta_meta, np.float64)
        sub = theta[mask]
        adam = adam_init(sub.size)
        for step in range(max_steps + 1):
            curves[i, step] = field_mse(learner.spec, theta,
                                        learner.loss_kind, s.grid)
            if step == max_steps:
                break
            _, grad = fastops.loss_grad(learner.spec, theta, s.train_x,
                                        s.train_xdot, learner.loss_kind)
            sub, adam = adam_update(adam, sub, grad[mask], adapt_lr)
            theta[mask] = sub
    return curves.mean(axis=0)


def _true_energies(true_params: PhysicalParams, X: np.ndarray):
    """Per-row true H, truncated at the first guard violation."""
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        try:
            out[i] = hamiltonian_many(true_params, X[i : i + 1])[0]
        except DomainError:
            return out[:i], i
    return out, X.shape[0]


def rollout_eval(spec, params_adapted, true_params: PhysicalParams, x0,
                 T_span: float = 20.0, samples: int = 200,
                 loss_kind: str = "hnn", with_states: bool = False):
    """Integrate the learner's field against the true flow from x0.

    state_mse(t) = ||x_pred(t) - x_true(t)||^2 and energy_mse(t) =
    (H_true(x_pred) - H_true(x_true))^2 at t_k = k * T / samples.  If the
    learned field blows up, the series is truncated at the last completed
    sample and failure_time records where integration stopped.

    loss_kind "oracle" integrates the true field on both sides, which
    bounds the integrator noise floor of the two MSE series.
    """
    x0 = np.asarray(x0, np.float64)

    if loss_kind == "oracle":
        pred_field = field_fn(true_params)
    else:
        def pred_field(x):
            return fastops.predicted_field(spec, params_adapted, x[None, :],
                                           loss_kind)[0]

    failure = None
    n = samples
    try:
        _, Xp = integrate(pred_field, x0, T_span, n,
                          rtol=ROLLOUT_RTOL, atol=ROLLOUT_ATOL)
    except IntegrationError as err:
        failure = err.t_failure
        # keep the sample spacing: k*T/samples for k = 1..n
        n = max(int(np.floor(failure * samples / T_span)) - 1, 0)
        if n > 0:
            _, Xp = integrate(pred_field, x0, n * T_span / samples, n,
                              rtol=ROLLOUT_RTOL, atol=ROLLOUT_ATOL)
        else:
            Xp = np.empty((0, x0.size))
    times = sample_times(T_span, samples)[:n]
    if n > 0:
        _, Xt = integrate(field_fn(true_params), x0, n * T_span / samples, n,
                          rtol=ROLLOUT_RTOL, atol=ROLLOUT_ATOL)
    else:
        Xt = np.empty((0, x0.size))
    Hp, kp = _true_energies(true_params, Xp)
    Ht, kt = _true_energies(true_params, Xt)
    kept = min(kp, kt)
    if kept < n:
        # a trajectory crossed the evaluation guard: stop at the last good sample
        failure = float(times[kept])
        times, Xp, Xt = times[:kept], Xp[:kept], Xt[:kept]
        Hp, Ht = Hp[:kept], Ht[:kept]
    state_mse = np.sum((Xp - Xt) ** 2, axis=1)
    energy_mse = (Hp - Ht) ** 2
    report = RolloutReport(times, state_mse, energy_mse, failure)
    return (report, Xp, Xt) if with_states else report


def export_field(spec, params, loss_kind: str, grid: GridTestSet,
                 path: str) -> None:
    """CSV of lattice states with predicted and true fields, full precision."""
    n = grid.states.shape[1] // 2
    F = fastops.predicted_field(spec, params, grid.states, loss_kind)
    cols = [f"q{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)]
    for tag in ("pred", "true"):
        cols += [f"qdot{i+1}_{tag}" for i in range(n)]
        cols += [f"pdot{i+1}_{tag}" for i in range(n)]
    lines = [",".join(cols)]
    for b in range(grid.states.shape[0]):
        row = np.concatenate([grid.states[b], F[b], grid.derivatives[b]])
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_export(path: str):
    """Parse an export_field CSV back to (states, pred, true)."""
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    data = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
    d = data.shape[1] // 3
    return data[:, :d], data[:, d : 2 * d], data[:, 2 * d :]


def ablation_tasks(kinds, task_counts, system: str, mode: str, K: int,
                   seed: int, inner_cfg: InnerConfig, outer_cfg: OuterConfig,
                   n_points: int = 50, n_systems: int = 10,
                   hidden=(64, 64, 64), adapt_steps: int = ADAPT_STEPS,
                   adapt_lr: float = ADAPT_LR):
    """Meta-train each kind at each pool size; score all on one shared suite.

    Returns {kind: {count: EvalReport}}.  Counts must be ascending; each
    (kind, count) cell trains from its own freshly seeded initialization.
    """
    task_counts = list(task_counts)
    if task_counts != sorted(task_counts) or len(set(task_counts)) != len(task_counts):
        raise ValueError("task_counts must be strictly ascending")
    state_dim = 4 if system == "kepler" else 2
    suite = make_meta_test_suite(system, mode, K, seed, n_systems)
    table = {}
    for j, kind in enumerate(kinds):
        learner = build_learner(kind, state_dim, hidden, inner_cfg)
        table[kind] = {}
        for i, count in enumerate(task_counts):
            sub_seed = int(seeding.split(seed, seeding.ABLATE, i, j)
                           .integers(2 ** 63))
            pool = make_meta_train(system, count, n_points, seed=sub_seed)
            theta = init_params(learner.spec, sub_seed)
            if learner.meta_trained:
                theta, _ = meta_train(learner.spec, theta, pool,
                                      learner.inner, outer_cfg, sub_seed,
                                      loss_kind=learner.loss_kind)
            elif learner.pretrained:
                epochs = max(1, pretrain_budget(outer_cfg, learner.inner)
                             // len(pool))
                theta = pretrain(learner.spec, theta, pool, epochs,
                                 outer_cfg.lr)
            table[kind][count] = adapt_and_eval(learner, theta, suite,
                                                adapt_steps, adapt_lr)
    return table
