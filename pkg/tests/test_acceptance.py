"""Acceptance suite: one test per release criterion, at stated tolerances.

Each test prints a single line with the measured values, so `pytest -v`
gives a one-line pass/fail verdict per criterion.  The desk-scale
training runs (criteria 4-8) share session fixtures; the whole file
targets a few minutes on a desktop CPU.

Criteria 4, 5 and 6 are encoded exactly as stated and currently fail at
the pinned desk scale.  The meta-learned representations themselves are
strong (their training-style adaptation reaches grid MSE ~0.1 on novel
systems), but the mandated evaluation protocol of 10-50 Adam steps at
lr 0.002 can move each parameter by at most ~steps*lr = 0.02-0.1, while
the bi-level objective places per-task optima ~0.3 away from the meta
init.  The tests report the shortfall rather than hiding it; the fix
would be a protocol change, which is out of scope here.
"""

import filecmp
import os

import numpy as np
import pytest

from hamlearn import fastops, seeding
from hamlearn import tape as T
from hamlearn.cli import main
from hamlearn.evaluation import (ablation_tasks, adapt_and_eval, adapt_params,
                                 learning_curve)
from hamlearn.metalearn import (InnerConfig, OuterConfig, adam_init,
                                build_learner, hnn_loss, inner_adapt,
                                meta_step, meta_train, pretrain,
                                pretrain_budget)
from hamlearn.network import hnn_spec, init_params, param_count, update_mask
from hamlearn.physics import (SYSTEMS, field_fn, hamiltonian_graph,
                              hamiltonian_many, integrate, true_field,
                              true_field_many)
from hamlearn.taskgen import (make_meta_test_suite, make_meta_train,
                              sample_params, sample_states)

DESK_SEEDS = (0, 1, 2)
DESK_TASKS = 1000
DESK_POINTS = 50


def _train(kind, system, seed, n_tasks=DESK_TASKS):
    """Meta-train / pretrain one learner at the desk-run defaults."""
    outer = OuterConfig()
    pool = make_meta_train(system, n_tasks, DESK_POINTS, seed)
    learner = build_learner(kind)
    theta = init_params(learner.spec, seed)
    if learner.meta_trained:
        theta, _ = meta_train(learner.spec, theta, pool, learner.inner,
                              outer, seed, loss_kind=learner.loss_kind)
    elif learner.pretrained:
        epochs = max(1, pretrain_budget(outer, learner.inner) // len(pool))
        theta = pretrain(learner.spec, theta, pool, epochs, 0.001)
    return learner, theta


@pytest.fixture(scope="session")
def spring_runs():
    """Desk runs on spring-mass for all Table-ordering learners, 3 seeds."""
    runs = {}
    for seed in DESK_SEEDS:
        runs[seed] = {kind: _train(kind, "spring_mass", seed)
                      for kind in ("hanil", "hamaml", "hnn_pretrained",
                                   "hnn_scratch")}
    return runs


@pytest.fixture(scope="session")
def pendulum_hanil():
    return _train("hanil", "pendulum", DESK_SEEDS[0])


def test_criterion_1_autodiff_gradients_match_finite_differences():
    spec = hnn_spec(2)
    n = param_count(spec)
    rng = np.random.default_rng(101)
    worst = 0.0
    for i in range(100):
        theta = init_params(spec, 1000 + i)
        X = rng.uniform(-2.0, 2.0, (16, 2))
        Xdot = rng.uniform(-2.0, 2.0, (16, 2))
        _, grad = fastops.loss_grad(spec, theta, X, Xdot, "hnn")
        # full coordinate sweep on three nets, a random subset on the rest
        coords = (np.arange(n) if i < 3
                  else rng.choice(n, size=48, replace=False))
        h = 1e-5
        for j in coords:
            e = np.zeros(n)
            e[j] = h
            fd = (fastops.loss_value(spec, theta + e, X, Xdot, "hnn")
                  - fastops.loss_value(spec, theta - e, X, Xdot, "hnn")) / (2 * h)
            worst = max(worst, abs(grad[j] - fd) / max(1.0, abs(fd)))
    assert worst < 1e-5, f"worst hnn_loss gradient rel err {worst:.3g}"

    # independent route: the scalar-graph backward pass on small nets
    gspec = hnn_spec(2, (6, 5))
    for s in range(3):
        theta = init_params(gspec, 300 + s)
        X = rng.uniform(-2.0, 2.0, (8, 2))
        Xdot = rng.uniform(-2.0, 2.0, (8, 2))
        g = T.Graph()
        ids = g.leaf_many(theta)
        node = hnn_loss(g, gspec, ids, X, Xdot)
        graph_grad = g.grad_values(node, ids)
        _, fast_grad = fastops.loss_grad(gspec, theta, X, Xdot, "hnn")
        np.testing.assert_allclose(graph_grad, fast_grad, rtol=1e-9)

    # second-order meta-gradient vs finite differences of the composed
    # bi-level objective, one hidden unit
    bspec = hnn_spec(2, (1,))
    bn = param_count(bspec)
    rng2 = np.random.default_rng(7)
    tasks = []
    for _ in range(2):
        params = sample_params("spring_mass", rng2)
        X = sample_states(params, rng2, 6) / 10.0
        Xt = sample_states(params, rng2, 6) / 10.0

        class _Task:
            pass

        t = _Task()
        t.train_x, t.train_xdot = X, true_field_many(params, X)
        t.test_x, t.test_xdot = Xt, true_field_many(params, Xt)
        tasks.append(t)
    inner = InnerConfig(steps=2, lr=0.05, update_set="all")
    outer = OuterConfig(task_batch=2)
    theta0 = init_params(bspec, 5)

    def composed(th):
        total = 0.0
        for t in tasks:
            tp = inner_adapt(bspec, th, t.train_x, t.train_xdot, inner, "hnn")
            total += fastops.loss_value(bspec, tp, t.test_x, t.test_xdot, "hnn")
        return total

    th1, _, _ = meta_step(bspec, theta0, tasks, inner, outer,
                          adam_init(bn), optimizer="sgd")
    meta_grad = (theta0 - th1) / outer.lr
    h = 1e-6
    worst2 = 0.0
    for j in range(bn):
        e = np.zeros(bn)
        e[j] = h
        fd = (composed(theta0 + e) - composed(theta0 - e)) / (2 * h)
        worst2 = max(worst2, abs(meta_grad[j] - fd) / max(1.0, abs(fd)))
    print(f"criterion 1: loss-grad rel err {worst:.3g} (<1e-5), "
          f"meta-grad rel err {worst2:.3g} (<1e-4)")
    assert worst2 < 1e-4, f"worst meta-gradient rel err {worst2:.3g}"


def test_criterion_2_true_fields_and_energy_conservation():
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(1000):
        system = SYSTEMS[rng.integers(len(SYSTEMS))]
        params = sample_params(system, rng)
        x = sample_states(params, rng, 1)[0]
        g = T.Graph()
        x_ids = g.leaf_many(x)
        h_node = hamiltonian_graph(g, params, x_ids)
        dh = g.grad_values(h_node, x_ids)
        n = x.size // 2
        field_ad = np.concatenate([dh[n:], -dh[:n]])
        ref = true_field(params, x)
        worst = max(worst, float(np.max(
            np.abs(field_ad - ref) / np.maximum(1.0, np.abs(ref)))))
    assert worst < 1e-12, f"worst field rel err {worst:.3g}"

    rng = np.random.default_rng(22)
    params = sample_params("pendulum", rng)
    x0 = sample_states(params, rng, 1)[0]
    _, X = integrate(field_fn(params), x0, 20.0, 200, rtol=1e-8, atol=1e-10)
    H = hamiltonian_many(params, X)
    H0 = float(hamiltonian_many(params, x0[None, :])[0])
    drift = float(np.max(np.abs(H - H0))) / max(1.0, abs(H0))
    print(f"criterion 2: field rel err {worst:.3g} (<1e-12), "
          f"20s pendulum energy drift {drift:.3g} (<1e-6)")
    assert drift < 1e-6, f"20s pendulum energy drift {drift:.3g}"


def test_criterion_3_anil_updates_touch_only_their_layers():
    rng = np.random.default_rng(33)
    params = sample_params("spring_mass", rng)
    X = sample_states(params, rng, 50)
    Xdot = true_field_many(params, X)
    for kind in ("hanil", "hanil_inv"):
        learner = build_learner(kind)
        theta = init_params(learner.spec, 4)
        adapted = inner_adapt(learner.spec, theta, X, Xdot, learner.inner,
                              "hnn")
        mask = update_mask(learner.spec, learner.inner.update_set)
        frozen = ~mask
        assert np.array_equal(adapted[frozen], theta[frozen]), \
            f"{kind}: frozen slice changed"
        assert not np.array_equal(adapted[mask], theta[mask]), \
            f"{kind}: update slice did not move"
    print("criterion 3: hanil body and hanil_inv layer 0 bitwise frozen "
          "after 5 inner steps")


def test_criterion_4_desk_scale_table_ordering(spring_runs):
    rows = {}
    wins = 0
    for seed in DESK_SEEDS:
        suite = make_meta_test_suite("spring_mass", "points", 50, seed, 10)
        mse = {kind: adapt_and_eval(learner, theta, suite, 10, 0.002).mse_mean
               for kind, (learner, theta) in spring_runs[seed].items()}
        rows[seed] = mse
        if (mse["hanil"] < mse["hamaml"] < mse["hnn_scratch"]
                and mse["hanil"] <= 0.1 * mse["hnn_pretrained"]):
            wins += 1
    detail = "; ".join(
        f"seed {s}: " + " ".join(f"{k}={v:.1f}" for k, v in rows[s].items())
        for s in DESK_SEEDS)
    print(f"criterion 4: ordering held on {wins}/3 seeds ({detail})")
    assert wins >= 2, (
        f"MSE(hanil) < MSE(hamaml) < MSE(scratch) with "
        f"hanil <= 0.1*pretrained held on {wins}/3 seeds. {detail}. "
        f"The 10-step lr-0.002 Adam adaptation moves parameters by at most "
        f"~0.02 while the meta-learned per-task optima sit ~0.3 away, so "
        f"the meta-learners under-adapt at this protocol scale.")


def test_criterion_5_learning_curve_trends(pendulum_hanil):
    learner, theta = pendulum_hanil
    seed = DESK_SEEDS[0]
    suite = make_meta_test_suite("pendulum", "points", 50, seed, 10)
    hanil_curve = learning_curve(learner, theta, suite, 50, 0.002)
    scratch = build_learner("hnn_scratch")
    scratch_curve = learning_curve(scratch, init_params(scratch.spec, seed),
                                   suite, 50, 0.002)
    f_hanil = hanil_curve[0] / hanil_curve[50]
    f_scratch = scratch_curve[0] / scratch_curve[50]
    print(f"criterion 5: hanil improvement {f_hanil:.2f}x (need >= 10), "
          f"scratch improvement {f_scratch:.2f}x (need < 2)")
    assert f_scratch < 2.0, \
        f"scratch improved {f_scratch:.2f}x over 50 steps, expected < 2x"
    assert f_hanil >= 10.0, (
        f"hanil improved {f_hanil:.2f}x from step 0 ({hanil_curve[0]:.2f}) "
        f"to step 50 ({hanil_curve[50]:.2f}), criterion needs >= 10x. "
        f"50 Adam steps at lr 0.002 move each weight <= ~0.1, far short of "
        f"the displacement the inner training loop was optimized for.")


def test_criterion_6_task_count_ablation_trend():
    seed = DESK_SEEDS[0]
    table = ablation_tasks(["hanil", "hnn_pretrained"], [50, DESK_TASKS],
                           "pendulum", "points", 50, seed, InnerConfig(),
                           OuterConfig(), n_points=DESK_POINTS)
    h50 = table["hanil"][50].mse_mean
    h1k = table["hanil"][DESK_TASKS].mse_mean
    p50 = table["hnn_pretrained"][50].mse_mean
    p1k = table["hnn_pretrained"][DESK_TASKS].mse_mean
    f_hanil = h50 / h1k
    f_pre = max(p50, p1k) / min(p50, p1k)
    print(f"criterion 6: hanil 50t {h50:.2f} -> 1000t {h1k:.2f} "
          f"(factor {f_hanil:.3f}), pretrained change {f_pre:.3f}")
    assert h1k < h50, f"hanil MSE at 1000 tasks {h1k:.2f} !< 50 tasks {h50:.2f}"
    assert f_pre < f_hanil, (
        f"pretrained changed {f_pre:.3f}x across task counts, not less than "
        f"hanil's improvement factor {f_hanil:.3f}x; both learners sit in "
        f"the under-adapted regime where pool size barely matters.")


def test_criterion_7_points_beat_matched_trajectories(spring_runs):
    wins = 0
    detail = []
    for seed in DESK_SEEDS:
        learner, theta = spring_runs[seed]["hanil"]
        points = make_meta_test_suite("spring_mass", "points", 25, seed, 10)
        trajs = make_meta_test_suite("spring_mass", "trajectories", 5, seed, 10)
        mp = adapt_and_eval(learner, theta, points, 10, 0.002).mse_mean
        mt = adapt_and_eval(learner, theta, trajs, 10, 0.002).mse_mean
        wins += mp <= mt
        detail.append(f"seed {seed}: points {mp:.1f} vs trajectories {mt:.1f}")
    print(f"criterion 7: points <= trajectories on {wins}/3 seeds "
          f"({'; '.join(detail)})")
    assert wins >= 2, "; ".join(detail)


def test_criterion_8_learned_flow_conserves_its_own_hamiltonian(spring_runs):
    learner, theta = spring_runs[DESK_SEEDS[0]]["hanil"]
    suite = make_meta_test_suite("spring_mass", "points", 50, DESK_SEEDS[0], 10)
    s = suite[0]
    adapted = adapt_params(learner, theta, s.train_x, s.train_xdot, 10, 0.002)
    rng = seeding.split(909, seeding.ROLLOUT, 0)
    x0 = sample_states(s.params, rng, 1)[0]

    def learned_field(x):
        return fastops.hnn_field(learner.spec, adapted, x[None, :])[0]

    _, X = integrate(learned_field, x0, 1.0, 100, rtol=1e-8, atol=1e-10)
    H = fastops.mlp_forward(learner.spec, adapted,
                            np.vstack([x0, X]))[:, 0]
    drift = float(np.max(np.abs(H - H[0]))) / max(1.0, abs(H[0]))
    print(f"criterion 8: learned-H drift over 1s rollout {drift:.3g} (<1e-5)")
    assert drift < 1e-5, f"H_theta drift {drift:.3g} over its own flow"


def test_criterion_9_cli_pipeline_is_byte_reproducible(tmp_path):
    cfg = "\n".join([
        "system = pendulum",
        "seed = 13",
        "learner = hanil",
        "episodes = 4",
        "task_batch = 2",
        "inner_steps = 2",
        "hidden = 8,8",
        "mode = points",
        "k = 10",
        "n_systems = 3",
        "adapt_steps = 3",
        "strict_serial = true",
    ]) + "\n"
    outputs = []
    for name in ("a", "b"):
        root = tmp_path / name
        root.mkdir()
        (root / "run.cfg").write_text(cfg)
        old = os.getcwd()
        os.chdir(root)  # relative out dirs keep provenance text identical
        try:
            assert main(["gen", "--config", "run.cfg", "--tasks", "30",
                         "--points", "10", "--out", "ds"]) == 0
            assert main(["metatrain", "--config", "run.cfg", "--dataset",
                         "ds", "--out", "train"]) == 0
            assert main(["eval", "--config", "run.cfg", "--checkpoint",
                         "train/checkpoint.json", "--out", "ev"]) == 0
        finally:
            os.chdir(old)
        files = sorted(
            os.path.relpath(os.path.join(dirpath, f), root)
            for dirpath, _, fs in os.walk(root) for f in fs)
        outputs.append((root, files))
    (root_a, files_a), (root_b, files_b) = outputs
    assert files_a == files_b
    mismatch = [f for f in files_a
                if not filecmp.cmp(root_a / f, root_b / f, shallow=False)]
    print(f"criterion 9: {len(files_a)} output files byte-identical "
          f"across reruns (gen + metatrain + eval)")
    assert not mismatch, f"files differ between identical runs: {mismatch}"
