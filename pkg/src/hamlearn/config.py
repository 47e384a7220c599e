"""Run configuration, checkpoint persistence, and provenance helpers.

Config files are flat `key = value` text: one assignment per line, `#`
starts a comment, blank lines ignored.  Keys are RunConfig field names;
values are parsed by the field's type (ints, floats, true/false bools,
comma-separated ints for `hidden`).  CLI flags override file values.
"""

from __future__ import annotations

import json
import os
import subprocess
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .metalearn import (LEARNER_KINDS, AdamState, InnerConfig, LearnerDef,
                        OuterConfig, build_learner)
from .network import NetworkSpec, param_count
from .physics import SYSTEMS

CHECKPOINT_FORMAT_VERSION = 1

ENV_SEED = "HAMLEARN_SEED"


@dataclass
class RunConfig:
    system: str = "spring_mass"
    learner: str = "hanil"
    seed: int = 0
    dataset: str = ""
    out_dir: str = "out"
    # inner loop
    inner_steps: int = 5
    inner_lr: float = 0.002
    # outer loop
    episodes: int = 100
    task_batch: int = 10
    outer_lr: float = 0.001
    second_order: bool = True
    # network
    hidden: tuple = (64, 64, 64)
    # meta-test protocol
    mode: str = "points"
    k: int = 50
    n_systems: int = 10
    adapt_steps: int = 10
    adapt_lr: float = 0.002
    # runtime
    strict_serial: bool = False

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.learner not in LEARNER_KINDS:
            raise ValueError(f"unknown learner {self.learner!r}")
        if self.mode not in ("points", "trajectories"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def inner_config(self, update_set: str = "all") -> InnerConfig:
        return InnerConfig(self.inner_steps, self.inner_lr, update_set)

    def outer_config(self) -> OuterConfig:
        return OuterConfig(self.episodes, self.task_batch, self.outer_lr,
                           self.second_order)

    def learner_def(self) -> LearnerDef:
        state_dim = 4 if self.system == "kepler" else 2
        return build_learner(self.learner, state_dim, tuple(self.hidden),
                             self.inner_config())


def _parse_value(name: str, kind, text: str):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is tuple:
        return tuple(int(p) for p in text.split(",") if p.strip())
    return text


_FIELD_KINDS = {f.name: (tuple if f.name == "hidden" else type(f.default))
                for f in fields(RunConfig)}


def read_config_file(path: str) -> dict:
    """Parse a flat key = value file into typed values."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in _FIELD_KINDS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, _FIELD_KINDS[key], text)
    return values


def resolve_config(file_values: dict = None, overrides: dict = None) -> RunConfig:
    """Defaults <- config file <- CLI flags, with the env seed fallback."""
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "seed" not in merged and os.environ.get(ENV_SEED):
        merged["seed"] = int(os.environ[ENV_SEED])
    unknown = set(merged) - set(_FIELD_KINDS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_text(cfg: RunConfig) -> str:
    """Resolved config as reloadable key = value text, plus the version."""
    lines = [f"# version = {version_string()}"]
    for key in sorted(asdict(cfg)):
        lines.append(f"{key} = {_fmt_value(getattr(cfg, key))}")
    return "\n".join(lines) + "\n"


def write_provenance(out_dir: str, cfg: RunConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(config_text(cfg))


_VERSION_CACHE = None


def version_string() -> str:
    """git-describe when available, else the package version."""
    global _VERSION_CACHE
    if _VERSION_CACHE is None:
        root = os.path.dirname(os.path.abspath(__file__))
        try:
            out = subprocess.run(
                ["git", "describe", "--tags", "--always", "--dirty"],
                cwd=root, capture_output=True, text=True, timeout=10)
            desc = out.stdout.strip()
            _VERSION_CACHE = (f"v{__version__}+g{desc}" if out.returncode == 0
                              and desc else f"v{__version__}")
        except OSError:
            _VERSION_CACHE = f"v{__version__}"
    return _VERSION_CACHE


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path: str, learner: LearnerDef, theta: np.ndarray,
                    adam: AdamState, episode: int, seed: int,
                    system: str) -> None:
    """JSON snapshot of a training state; floats round-trip exactly."""
    blob = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "learner": learner.kind,
        "system": system,
        "seed": int(seed),
        "episode": int(episode),
        "input_dim": learner.spec.input_dim,
        "hidden": list(learner.spec.hidden_dims),
        "output_dim": learner.spec.output_dim,
        "activation": learner.spec.activation,
        "params": [float(v) for v in theta],
        "adam": {"m": [float(v) for v in adam.m],
                 "v": [float(v) for v in adam.v],
                 "t": int(adam.t)},
        "version": version_string(),
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)
        fh.write("\n")


def load_checkpoint(path: str):
    """Returns (learner_def, theta, adam, blob) rebuilt from disk."""
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format in {path}")
    kind = blob["learner"]
    if kind not in LEARNER_KINDS:
        raise ValueError(f"checkpoint has unknown learner {kind!r}")
    learner = build_learner(kind, blob["input_dim"], tuple(blob["hidden"]))
    spec = learner.spec
    if spec.output_dim != blob["output_dim"] or \
            spec.activation != blob["activation"]:
        raise ValueError("checkpoint head does not match its learner kind")
    theta = np.asarray(blob["params"], np.float64)
    if theta.shape != (param_count(spec),):
        raise ValueError("checkpoint parameter count does not match its shape")
    adam = AdamState(np.asarray(blob["adam"]["m"], np.float64),
                     np.asarray(blob["adam"]["v"], np.float64),
                     int(blob["adam"]["t"]))
    if adam.m.shape != theta.shape or adam.v.shape != theta.shape:
        raise ValueError("checkpoint moment shapes do not match parameters")
    return learner, theta, adam, blob
