"""Timing comparison of the numba and pure-numpy kernel lanes.

Runs the hot kernels of both differentiation routes on a realistic
workload and prints per-call times for each backend.  The jitted lane is
warmed up before timing so compile time never pollutes the numbers.

    python benchmarks/bench_backends.py [--batch 256] [--repeats 30]
"""

import argparse
import time

import numpy as np

from hamlearn import _backend, fastops, metalearn, network
from hamlearn import tape as T


def _time(fn, repeats):
    fn()  # warmup; also triggers jit compilation on the numba lane
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_workloads(batch):
    spec = network.hnn_spec(2)
    nspec = network.naive_spec(2)
    rng = np.random.default_rng(0)
    theta = network.init_params(spec, 0)
    ntheta = network.init_params(nspec, 0)
    X = rng.uniform(-1.0, 1.0, (batch, 2))
    Xdot = rng.uniform(-1.0, 1.0, (batch, 2))
    vec = rng.normal(size=theta.size)

    # small graph: tape sweeps are O(nodes) and dominated by interpretation
    gspec = network.hnn_spec(2, (16, 16))
    gtheta = network.init_params(gspec, 1)
    g = T.Graph()
    pids = g.leaf_many(gtheta)
    loss = metalearn.hnn_loss(g, gspec, pids, X[:32], Xdot[:32])
    g.backward(loss, pids)

    return [
        ("hnn field (B x forward+input grad)",
         lambda: fastops.hnn_field(spec, theta, X)),
        ("hnn loss gradient",
         lambda: fastops.loss_grad(spec, theta, X, Xdot, "hnn")),
        ("hnn loss HVP",
         lambda: fastops.loss_hvp(spec, theta, X, Xdot, vec, "hnn")),
        ("naive loss gradient",
         lambda: fastops.loss_grad(nspec, ntheta, X, Xdot, "naive")),
        ("tape adjoint value sweep",
         lambda: g.grad_values(loss, pids)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()

    workloads = build_workloads(args.batch)
    results = {}
    for backend in ("numpy", "numba"):
        _backend.set_backend(backend)
        assert _backend.get_backend() == backend
        for name, fn in workloads:
            results.setdefault(name, {})[backend] = _time(fn, args.repeats)
    _backend.set_backend("auto")

    width = max(len(name) for name, _ in workloads)
    print(f"batch={args.batch}  net=(2,[64,64,64],1)  best of {args.repeats}")
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, _ in workloads:
        np_t = results[name]["numpy"]
        nb_t = results[name]["numba"]
        print(f"{name:<{width}}  {np_t * 1e3:>8.3f}ms  {nb_t * 1e3:>8.3f}ms"
              f"  {np_t / nb_t:>7.1f}x")


if __name__ == "__main__":
    main()
