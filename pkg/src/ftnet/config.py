"""Experiment configuration files (YAML).

A config names the task, the data source, the prior, generator and
discriminator layer blocks, training settings and the dump schedule.
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import GmmSpec
from .errors import ConfigError
from .gan import DEFAULT_COVERAGE_RADIUS, PriorSpec, TrainConfig
from .tensor_layer import Activation

SYNTHETIC_SCHEDULE = [1000, 2000, 4000, 6000, 8000, 10000]
MNIST_SCHEDULE = [10000, 20000, 30000, 40000, 50000]

_DEFAULT_ADAM = {"kind": "adam", "lr": 2e-4, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8}


@dataclass
class ExperimentConfig:
    name: str
    task: str
    prior: PriorSpec
    generator: list[dict]
    discriminator: list[dict]
    train: TrainConfig
    data: dict
    output_dir: str = "runs/default"
    log_interval: int = 100
    sample_iterations: list[int] = field(default_factory=list)
    checkpoint_iterations: list[int] = field(default_factory=list)
    num_samples: int = 10_000
    coverage_radius: float = DEFAULT_COVERAGE_RADIUS
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def gmm_spec(self) -> GmmSpec:
        d = dict(self.data)
        d.pop("kind")
        if "center" in d:
            d["center"] = tuple(d["center"])
        return GmmSpec(**d)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "task": self.task,
            "seed": self.train.seed,
            "output_dir": self.output_dir,
            "log_interval": self.log_interval,
            "data": copy.deepcopy(self.data),
            "prior": self.prior.to_dict(),
            "generator": copy.deepcopy(self.generator),
            "discriminator": copy.deepcopy(self.discriminator),
            "train": {
                "iterations": self.train.iterations,
                "batch_size": self.train.batch_size,
                "d_steps_per_g_step": self.train.d_steps_per_g_step,
                "generator_loss": self.train.generator_loss,
                "d_optimizer": dict(self.train.d_optimizer),
                "g_optimizer": dict(self.train.g_optimizer),
            },
            "schedule": {
                "samples": list(self.sample_iterations),
                "checkpoints": list(self.checkpoint_iterations),
                "num_samples": self.num_samples,
            },
            "eval": {"coverage_radius": self.coverage_radius},
        }


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing '{key}' in {where}")
    return d[key]


def _int_list(value, where: str) -> list[int]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{where} must be a non-empty list of integers")
    try:
        out = [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a list of integers") from None
    if min(out) < 1:
        raise ConfigError(f"{where} extents must be >= 1")
    return out


def _blocks(raw, where: str) -> list[dict]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where} needs a non-empty list of layer blocks")
    blocks = []
    for k, b in enumerate(raw):
        w = f"{where}[{k}]"
        kind = _require(b, "kind", w)
        if kind not in ("tensor", "dense"):
            raise ConfigError(f"{w}: unknown layer kind {kind!r}")
        ins = _int_list(_require(b, "in", w), f"{w}.in")
        outs = _int_list(_require(b, "out", w), f"{w}.out")
        if kind == "tensor" and len(ins) != len(outs):
            raise ConfigError(f"{w}: tensor layer maps order {len(ins)} to order {len(outs)}")
        try:
            act = Activation.parse(b.get("activation", "identity"))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{w}: {exc}") from None
        act_spec = act.kind if act.kind != "leaky_relu" else f"leaky_relu({act.slope})"
        blocks.append({"kind": kind, "in": ins, "out": outs, "activation": act_spec})
    for k, (a, b) in enumerate(zip(blocks, blocks[1:])):
        if a["kind"] == b["kind"] == "tensor" and a["out"] != b["in"]:
            raise ConfigError(f"{where}: layer {k} outputs {a['out']} but layer {k + 1} reads {b['in']}")
        if math.prod(a["out"]) != math.prod(b["in"]):
            raise ConfigError(f"{where}: layer {k} outputs {math.prod(a['out'])} values but "
                              f"layer {k + 1} reads {math.prod(b['in'])}")
    return blocks


def _optimizer(raw, where: str) -> dict:
    spec = dict(_DEFAULT_ADAM)
    if raw is not None:
        if not isinstance(raw, dict):
            raise ConfigError(f"{where} must be a mapping")
        kind = raw.get("kind", "adam")
        if kind == "sgd":
            spec = {"kind": "sgd", "lr": 0.01}
        elif kind != "adam":
            raise ConfigError(f"{where}: unknown optimizer {kind!r}")
        unknown = set(raw) - set(spec)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        try:
            spec.update({k: (float(v) if k != "kind" else v) for k, v in raw.items()})
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: numeric settings must be numbers") from None
    if spec["lr"] < 0:
        raise ConfigError(f"{where}: learning rate must be >= 0")
    return spec


def _data(raw, task: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("'data' must be a mapping")
    kind = raw.get("kind", "gmm" if task == "synthetic" else "mnist")
    if kind == "gmm":
        d = {"kind": "gmm"}
        defaults = GmmSpec()
        d["num_clusters"] = int(raw.get("num_clusters", defaults.num_clusters))
        d["center"] = [float(v) for v in raw.get("center", defaults.center)]
        d["ring_radius"] = float(raw.get("ring_radius", defaults.ring_radius))
        d["variance"] = float(raw.get("variance", defaults.variance))
        d["points"] = int(raw.get("points", defaults.points))
        try:
            GmmSpec(d["num_clusters"], tuple(d["center"]), d["ring_radius"], d["variance"],
                    d["points"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"data: {exc}") from None
        return d
    if kind == "mnist":
        d = {"kind": "mnist", "images": str(_require(raw, "images", "data"))}
        if raw.get("labels") is not None:
            d["labels"] = str(raw["labels"])
        d["limit"] = int(raw["limit"]) if raw.get("limit") is not None else None
        d["holdout"] = int(raw.get("holdout", 0))
        return d
    raise ConfigError(f"data: unknown kind {kind!r}")


def parse_config(raw: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    """Validate a config mapping and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    task = _require(raw, "task", "config")
    if task not in ("synthetic", "mnist"):
        raise ConfigError(f"unknown task {task!r}")
    generator = _blocks(_require(raw, "generator", "config"), "generator")
    discriminator = _blocks(_require(raw, "discriminator", "config"), "discriminator")

    prior_raw = dict(raw.get("prior") or {})
    prior_raw.setdefault("shape", generator[0]["in"])
    try:
        prior = PriorSpec.from_dict(prior_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"prior: {exc}") from None
    if math.prod(prior.shape) != math.prod(generator[0]["in"]):
        raise ConfigError(f"prior shape {prior.shape} does not feed generator input "
                          f"{generator[0]['in']}")
    if math.prod(generator[-1]["out"]) != math.prod(discriminator[0]["in"]):
        raise ConfigError("generator output does not match discriminator input")
    if math.prod(discriminator[-1]["out"]) != 1:
        raise ConfigError("discriminator must end in a single output")

    t = raw.get("train") or {}
    seed = raw.get("seed", 0)
    env_seed = os.environ.get("FTNET_SEED")
    if env_seed not in (None, ""):
        seed = env_seed
    try:
        train = TrainConfig(
            iterations=int(t.get("iterations", 10_000)),
            batch_size=int(t.get("batch_size", 64)),
            d_steps_per_g_step=int(t.get("d_steps_per_g_step", 1)),
            d_optimizer=_optimizer(t.get("d_optimizer"), "train.d_optimizer"),
            g_optimizer=_optimizer(t.get("g_optimizer"), "train.g_optimizer"),
            seed=int(seed),
            generator_loss=str(t.get("generator_loss", "nonsaturating")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None

    sched = raw.get("schedule") or {}
    default_samples = SYNTHETIC_SCHEDULE if task == "synthetic" else MNIST_SCHEDULE
    try:
        samples = sorted({int(v) for v in sched.get("samples", default_samples)})
        checkpoints = sorted({int(v) for v in sched.get("checkpoints", samples)})
    except (TypeError, ValueError):
        raise ConfigError("schedule entries must be lists of iteration numbers") from None
    if min(samples + checkpoints, default=1) < 1:
        raise ConfigError("scheduled iterations must be >= 1")
    ev = raw.get("eval") or {}
    try:
        data = _data(raw.get("data") or {}, task)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"data: {exc}") from None
    if data.get("limit") is not None and data["limit"] < 1 or data.get("holdout", 0) < 0:
        raise ConfigError("data.limit must be >= 1 and data.holdout >= 0")
    try:
        cfg = ExperimentConfig(
            name=str(raw.get("name", task)),
            task=task,
            prior=prior,
            generator=generator,
            discriminator=discriminator,
            train=train,
            data=data,
            output_dir=str(raw.get("output_dir", f"runs/{raw.get('name', task)}")),
            log_interval=int(raw.get("log_interval", 100)),
            sample_iterations=samples,
            checkpoint_iterations=checkpoints,
            num_samples=int(sched.get("num_samples", 10_000 if task == "synthetic" else 64)),
            coverage_radius=float(ev.get("coverage_radius", DEFAULT_COVERAGE_RADIUS)),
            base_dir=Path(base_dir),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.log_interval < 1 or cfg.num_samples < 1 or cfg.coverage_radius <= 0:
        raise ConfigError("log_interval, num_samples and coverage_radius must be positive")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_config(raw, path.parent)
