"""Command-line surface: gen, metatrain, eval, rollout, ablate.

Exit codes are a stable scripting contract: 0 on success, 1 for usage
errors (bad flags, bad config keys), 2 for runtime or numeric failures
(missing files, corrupt data, non-finite losses).

Every command writes the resolved configuration and version string to
<out>/config.txt so a run can be reproduced from its own output.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import seeding
from .config import (RunConfig, load_checkpoint, read_config_file,
                     resolve_config, save_checkpoint, version_string,
                     write_provenance)
from .evaluation import (ablation_tasks, adapt_and_eval, adapt_params,
                         learning_curve, rollout_eval)
from .metalearn import adam_init, meta_train, pretrain, pretrain_budget
from .network import init_params
from .physics import SYSTEMS, true_field_many
from .taskgen import (load_dataset, make_meta_test_suite, make_meta_train,
                      sample_params, sample_states, write_dataset)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we own the codes
        raise UsageError(message)


def _fmt(v: float) -> str:
    return repr(float(v))


def _hidden_arg(text: str):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _common_flags(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--seed", type=int, help="run seed (env HAMLEARN_SEED "
                     "is the fallback when neither flag nor file sets one)")
    sub.add_argument("--out", dest="out_dir", help="output directory")
    sub.add_argument("--strict-serial", dest="strict_serial",
                     action="store_const", const=True,
                     help="serial execution; zeroes wall_time columns so "
                     "reruns are byte-identical")


def _resolve(args, keys):
    """RunConfig from defaults <- config file <- set flags, plus the raw
    file values for commands that need to know what the file pinned."""
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k, None)
                 for k in keys + ("seed", "out_dir", "strict_serial")}
    return resolve_config(file_values, overrides), file_values


def build_parser() -> _Parser:
    p = _Parser(prog="hamlearn", description=__doc__)
    p.add_argument("--version", action="version", version=version_string())
    sub = p.add_subparsers(dest="cmd")

    g = sub.add_parser("gen", help="generate a task dataset")
    g.add_argument("--system", choices=SYSTEMS)
    g.add_argument("--tasks", type=int, default=10000)
    g.add_argument("--points", type=int, default=50)
    _common_flags(g)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("metatrain", help="meta-train a learner on a dataset")
    m.add_argument("--dataset", help="dataset directory from gen")
    m.add_argument("--learner")
    m.add_argument("--episodes", type=int)
    m.add_argument("--task-batch", dest="task_batch", type=int)
    m.add_argument("--inner-steps", dest="inner_steps", type=int)
    m.add_argument("--inner-lr", dest="inner_lr", type=float)
    m.add_argument("--outer-lr", dest="outer_lr", type=float)
    m.add_argument("--first-order", dest="second_order", action="store_const",
                   const=False)
    m.add_argument("--hidden", type=_hidden_arg)
    m.add_argument("--optimizer", choices=("adam", "sgd"), default="adam",
                   help="outer update rule; sgd exists for exactness tests")
    m.add_argument("--resume", help="checkpoint to continue from")
    _common_flags(m)
    m.set_defaults(func=cmd_metatrain)

    e = sub.add_parser("eval", help="adapt to held-out systems and score")
    e.add_argument("--checkpoint", help="required unless learner is "
                   "hnn_scratch")
    e.add_argument("--learner")
    e.add_argument("--system", choices=SYSTEMS)
    e.add_argument("--mode", choices=("points", "trajectories"))
    e.add_argument("--k", type=int)
    e.add_argument("--steps", dest="adapt_steps", type=int)
    e.add_argument("--adapt-lr", dest="adapt_lr", type=float)
    e.add_argument("--n-systems", dest="n_systems", type=int)
    e.add_argument("--hidden", type=_hidden_arg)
    _common_flags(e)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="integrate a learner against truth")
    r.add_argument("--checkpoint", help="required unless --oracle")
    r.add_argument("--oracle", action="store_true",
                   help="integrate the analytic field as the learner")
    r.add_argument("--system", choices=SYSTEMS)
    r.add_argument("--x0", help="comma-separated initial state; sampled "
                   "from the state region when omitted")
    r.add_argument("--T", dest="t_span", type=float, default=20.0)
    r.add_argument("--samples", type=int, default=200)
    r.add_argument("--k", type=int)
    r.add_argument("--steps", dest="adapt_steps", type=int,
                   help="adaptation steps before the rollout (default 50)")
    r.add_argument("--adapt-lr", dest="adapt_lr", type=float)
    _common_flags(r)
    r.set_defaults(func=cmd_rollout)

    a = sub.add_parser("ablate", help="task-count sweep or learning curve")
    a.add_argument("--counts", default="10,50,200,500,1000",
                   help="comma-separated ascending task counts")
    a.add_argument("--learners", default="hanil,hnn_pretrained")
    a.add_argument("--step-range", dest="step_range",
                   help="0:N  -> export the adaptation learning curve "
                   "for --checkpoint instead of sweeping task counts")
    a.add_argument("--checkpoint")
    a.add_argument("--system", choices=SYSTEMS)
    a.add_argument("--mode", choices=("points", "trajectories"))
    a.add_argument("--k", type=int)
    a.add_argument("--n-systems", dest="n_systems", type=int)
    a.add_argument("--points", type=int, default=50)
    a.add_argument("--episodes", type=int)
    a.add_argument("--task-batch", dest="task_batch", type=int)
    a.add_argument("--inner-steps", dest="inner_steps", type=int)
    a.add_argument("--hidden", type=_hidden_arg)
    _common_flags(a)
    a.set_defaults(func=cmd_ablate)
    return p


# -- commands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.tasks < 1:
        raise UsageError("--tasks must be >= 1")
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    cfg, _ = _resolve(args, ("system",))
    tasks = make_meta_train(cfg.system, args.tasks, args.points, cfg.seed)
    write_dataset(cfg.out_dir, cfg.system, cfg.seed, tasks)
    write_provenance(cfg.out_dir, cfg)
    print(f"wrote {len(tasks)} {cfg.system} tasks to {cfg.out_dir}")
    return 0


def cmd_metatrain(args) -> int:
    cfg, file_values = _resolve(
        args, ("dataset", "learner", "episodes", "task_batch", "inner_steps",
               "inner_lr", "outer_lr", "second_order", "hidden"))
    if cfg.learner == "hnn_scratch":
        raise UsageError("hnn_scratch has nothing to meta-train")
    if not cfg.dataset:
        raise UsageError("--dataset is required")
    manifest, tasks = load_dataset(cfg.dataset)
    if "system" in file_values and file_values["system"] != manifest["system"]:
        raise ValueError(f"dataset holds {manifest['system']!r} tasks, "
                         f"config says {file_values['system']!r}")
    cfg.system = manifest["system"]
    learner = cfg.learner_def()
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_provenance(cfg.out_dir, cfg)
    curve_path = os.path.join(cfg.out_dir, "curve.csv")
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.json")

    start_episode = 0
    adam = None
    if args.resume:
        prev, theta, adam, blob = load_checkpoint(args.resume)
        if prev.kind != cfg.learner:
            raise ValueError(f"checkpoint is {prev.kind!r}, config wants "
                             f"{cfg.learner!r}")
        if blob["system"] != cfg.system:
            raise ValueError("checkpoint system does not match the dataset")
        start_episode = blob["episode"]
    else:
        theta = init_params(learner.spec, cfg.seed)

    t0 = time.monotonic()
    mode = "a" if args.resume and os.path.exists(curve_path) else "w"
    with open(curve_path, mode) as fh:
        if mode == "w":
            fh.write("episode,meta_loss,wall_time\n")

        def log(ep, loss):
            wall = 0.0 if cfg.strict_serial else time.monotonic() - t0
            fh.write(f"{ep},{_fmt(loss)},{_fmt(wall)}\n")

        if learner.pretrained:
            epochs = max(1, pretrain_budget(cfg.outer_config(),
                                            learner.inner) // len(tasks))
            history = []
            theta = pretrain(learner.spec, theta, tasks, epochs,
                             cfg.outer_lr, history)
            for i, loss in enumerate(history):
                log(i, loss)
            adam = adam_init(theta.size)
            episode = len(history)
        else:
            theta, adam = meta_train(
                learner.spec, theta, tasks, learner.inner, cfg.outer_config(),
                cfg.seed, adam=adam, loss_kind=learner.loss_kind,
                optimizer=args.optimizer, start_episode=start_episode,
                on_episode=log)
            episode = cfg.episodes
    save_checkpoint(ckpt_path, learner, theta, adam, episode, cfg.seed,
                    cfg.system)
    print(f"trained {cfg.learner} to episode {episode}; "
          f"checkpoint at {ckpt_path}")
    return 0


def _load_learner_state(args, cfg):
    """Learner + parameters from a checkpoint, or a fresh scratch init.

    The checkpoint's own architecture and system win over config defaults;
    an explicit conflicting flag is an error rather than a silent override.
    """
    if args.checkpoint:
        learner, theta, _, blob = load_checkpoint(args.checkpoint)
        want = getattr(args, "learner", None)
        if want and want != learner.kind:
            raise ValueError(f"checkpoint is {learner.kind!r}, "
                             f"--learner says {want!r}")
        want = getattr(args, "system", None)
        if want and want != blob["system"]:
            raise ValueError("checkpoint system does not match --system")
        cfg.learner = learner.kind
        cfg.system = blob["system"]
        cfg.hidden = tuple(blob["hidden"])
        return learner, theta
    if cfg.learner != "hnn_scratch":
        raise UsageError("--checkpoint is required unless the learner is "
                         "hnn_scratch")
    learner = cfg.learner_def()
    return learner, init_params(learner.spec, cfg.seed)


def cmd_eval(args) -> int:
    cfg, _ = _resolve(args, ("learner", "system", "mode", "k", "adapt_steps",
                             "adapt_lr", "n_systems", "hidden"))
    learner, theta = _load_learner_state(args, cfg)
    suite = make_meta_test_suite(cfg.system, cfg.mode, cfg.k, cfg.seed,
                                 cfg.n_systems)
    rep = adapt_and_eval(learner, theta, suite, cfg.adapt_steps, cfg.adapt_lr)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_provenance(cfg.out_dir, cfg)
    with open(os.path.join(cfg.out_dir, "report.json"), "w") as fh:
        fh.write(rep.to_json() + "\n")
    with open(os.path.join(cfg.out_dir, "report.csv"), "w") as fh:
        fh.write("learner,system,mode,k,mse_mean,mse_std,n_systems,"
                 "adapt_steps\n")
        fh.write(f"{rep.learner},{rep.system},{rep.mode},{rep.k},"
                 f"{_fmt(rep.mse_mean)},{_fmt(rep.mse_std)},"
                 f"{rep.n_systems},{rep.adapt_steps}\n")
    print(f"{rep.learner} on {rep.system} ({rep.mode}, K={rep.k}): "
          f"mse {rep.mse_mean:.6g} +- {rep.mse_std:.6g} "
          f"over {rep.n_systems} systems")
    return 0


def cmd_rollout(args) -> int:
    cfg, file_values = _resolve(args, ("system", "k", "adapt_steps",
                                       "adapt_lr"))
    if args.adapt_steps is None and "adapt_steps" not in file_values:
        cfg.adapt_steps = 50  # rollouts default to a longer adaptation
    if args.oracle:
        learner, theta = None, None
        loss_kind = "oracle"
    else:
        learner, theta = _load_learner_state(args, cfg)
        loss_kind = learner.loss_kind
    rng = seeding.split(cfg.seed, seeding.ROLLOUT, 0)
    params = sample_params(cfg.system, rng)
    if not args.oracle:
        X = sample_states(params, rng, cfg.k)
        theta = adapt_params(learner, theta, X, true_field_many(params, X),
                             cfg.adapt_steps, cfg.adapt_lr)
    if args.x0:
        x0 = np.array([float(v) for v in args.x0.split(",") if v.strip()])
        if x0.size != 2 * params.n:
            raise UsageError(f"--x0 needs {2 * params.n} components")
    else:
        x0 = sample_states(params, rng, 1)[0]
    spec = learner.spec if learner is not None else None
    report, Xp, Xt = rollout_eval(spec, theta, params, x0, args.t_span,
                                  args.samples, loss_kind, with_states=True)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_provenance(cfg.out_dir, cfg)
    n = params.n
    cols = ["t", "state_mse", "energy_mse"]
    for tag in ("pred", "true"):
        cols += [f"q{i+1}_{tag}" for i in range(n)]
        cols += [f"p{i+1}_{tag}" for i in range(n)]
    path = os.path.join(cfg.out_dir, "rollout.csv")
    with open(path, "w") as fh:
        fh.write(f"# version = {version_string()}\n")
        fh.write(f"# system = {cfg.system}\n")
        fh.write(f"# params = {','.join(_fmt(v) for v in params.as_vector())}\n")
        fh.write(f"# x0 = {','.join(_fmt(v) for v in x0)}\n")
        if report.failure_time is not None:
            fh.write(f"# failure_time = {_fmt(report.failure_time)}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(len(report.times)):
            row = [report.times[i], report.state_mse[i], report.energy_mse[i]]
            row += list(Xp[i]) + list(Xt[i])
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    if report.failure_time is not None:
        print(f"integration stopped at t={report.failure_time:.3g}; "
              f"partial series in {path}")
    else:
        print(f"rollout complete; series in {path}")
    return 0


def cmd_ablate(args) -> int:
    cfg, _ = _resolve(args, ("system", "mode", "k", "n_systems", "episodes",
                             "task_batch", "inner_steps", "hidden"))
    os.makedirs(cfg.out_dir, exist_ok=True)
    if args.step_range:
        lo, _, hi = args.step_range.partition(":")
        try:
            lo, hi = int(lo), int(hi)
        except ValueError:
            raise UsageError("--step-range must look like 0:50")
        if lo != 0 or hi < 1:
            raise UsageError("--step-range must look like 0:50")
        learner, theta = _load_learner_state(args, cfg)
        write_provenance(cfg.out_dir, cfg)
        suite = make_meta_test_suite(cfg.system, cfg.mode, cfg.k, cfg.seed,
                                     cfg.n_systems)
        curve = learning_curve(learner, theta, suite, hi, cfg.adapt_lr)
        path = os.path.join(cfg.out_dir, "curve.csv")
        with open(path, "w") as fh:
            fh.write("step,mse_mean\n")
            for step, mse in enumerate(curve):
                fh.write(f"{step},{_fmt(mse)}\n")
        print(f"learning curve (0..{hi}) in {path}")
        return 0
    write_provenance(cfg.out_dir, cfg)
    counts = [int(c) for c in args.counts.split(",") if c.strip()]
    if not counts:
        raise UsageError("--counts must name at least one task count")
    if counts != sorted(set(counts)) or counts[0] < 1:
        raise UsageError("--counts must be positive and strictly ascending")
    kinds = [k for k in args.learners.split(",") if k.strip()]
    if not kinds:
        raise UsageError("--learners must name at least one learner")
    table = ablation_tasks(kinds, counts, cfg.system, cfg.mode, cfg.k,
                           cfg.seed, cfg.inner_config(), cfg.outer_config(),
                           n_points=args.points, n_systems=cfg.n_systems,
                           hidden=tuple(cfg.hidden),
                           adapt_steps=cfg.adapt_steps,
                           adapt_lr=cfg.adapt_lr)
    path = os.path.join(cfg.out_dir, "ablation.csv")
    with open(path, "w") as fh:
        fh.write("learner,task_count,mse_mean,mse_std\n")
        for kind in kinds:
            for count in counts:
                rep = table[kind][count]
                fh.write(f"{kind},{count},{_fmt(rep.mse_mean)},"
                         f"{_fmt(rep.mse_std)}\n")
    print(f"ablation table in {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a subcommand is required "
                             "(gen, metatrain, eval, rollout, ablate)")
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, ArithmeticError,
            RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
