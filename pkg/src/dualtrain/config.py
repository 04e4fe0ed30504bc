"""
Run and experiment configuration.

Configs are TOML (or the equivalent JSON) documents. Every table maps onto a
dataclass below and unknown keys are rejected. A run config looks like::

    mode = "motivated"          # classical | motivated | ablation_a | ablation_b
    seed = 0
    epochs = 30
    batch_size = 64
    depth_rule = "last"         # optional; "last" or "prefix", default per family
    ablation_counts = [3, 5]    # ablation_b only, one count per epoch

    [base]
    family = "WidthMLP"         # DepthResNet | WidthMLP | WidthConvNet
    level = 0
    # stage_layers = [1, 1]     # optional overrides of the family defaults
    # stage_widths = [32, 32]

    [motivated]
    family = "WidthMLP"
    level = 1

    [condition]
    kind = "consecutive_decrease"   # ema_decrease | validation_loss | gradient_slope
    k = 3                           # "inf" disables the condition
    alpha = 0.02
    rel_drop = 0.002

    [optimizer]
    kind = "sgd"                # sgd | adamw
    momentum = 0.9
    weight_decay = 5e-4
    betas = [0.9, 0.999]
    eps = 1e-8

    [schedule]
    kind = "cosine"             # cosine | constant
    base_lr = 0.1

    [data]
    kind = "spirals"            # spirals | blobs | cifar10
    n = 3000
    n_eval = 600
    num_classes = 3
    noise = 0.1
    input_shape = [2, 1, 1]
    seed = 0
    # cifar10 only: dir, train_n, eval_n, augment

An experiment spec is a run config without ``mode``/``seed`` plus
``seeds = [...]``, ``variants = [...]`` and optionally ``threads``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigError
from .motivation import ConditionKind
from .optim import Schedule
from .zoo import ArchConfig

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

MODES = ("classical", "motivated", "ablation_a", "ablation_b")
VARIANTS = ("classical_base", "classical_motivated", "dual", "ablation_a", "ablation_b")
DATA_KINDS = ("spirals", "blobs", "cifar10")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 5e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))


@dataclass(frozen=True)
class DataConfig:
    kind: str = "spirals"
    n: int = 3000
    n_eval: Optional[int] = None
    num_classes: int = 3
    noise: float = 0.1
    input_shape: Tuple[int, int, int] = (2, 1, 1)
    seed: int = 0
    dir: Optional[str] = None
    train_n: int = 5000
    eval_n: int = 1000
    augment: bool = False

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"unknown data kind {self.kind!r}; expected one of {DATA_KINDS}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))

    @property
    def arch_input_shape(self):
        return (3, 32, 32) if self.kind == "cifar10" else self.input_shape

    @property
    def arch_num_classes(self):
        return 10 if self.kind == "cifar10" else self.num_classes


@dataclass(frozen=True)
class RunConfig:
    base: ArchConfig
    motivated: Optional[ArchConfig] = None
    condition: ConditionKind = field(default_factory=ConditionKind)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: Schedule = field(default_factory=Schedule)
    epochs: int = 1
    batch_size: int = 64
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    mode: str = "classical"
    ablation_counts: Optional[Tuple[int, ...]] = None
    depth_rule: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.mode != "classical" and self.motivated is None:
            raise ConfigError(f"mode {self.mode!r} needs a motivated architecture")
        if self.mode == "ablation_b":
            if self.ablation_counts is None or len(self.ablation_counts) != self.epochs:
                raise ConfigError("ablation_b needs ablation_counts with one entry per epoch")
        if self.ablation_counts is not None:
            object.__setattr__(self, "ablation_counts", tuple(int(c) for c in self.ablation_counts))
        if self.schedule.total_epochs != self.epochs:
            object.__setattr__(self, "schedule", dataclasses.replace(self.schedule, total_epochs=self.epochs))

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def _strict(cls, raw: Dict[str, Any], where: str, **extra):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**{**raw, **extra})
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def _arch(raw, data: DataConfig, where: str) -> ArchConfig:
    raw = dict(raw)
    for key in ("num_classes", "input_shape"):
        raw.pop(key, None)  # always taken from the data section
    return _strict(
        ArchConfig, raw, where, num_classes=data.arch_num_classes, input_shape=data.arch_input_shape
    )


def _condition(raw) -> ConditionKind:
    raw = dict(raw)
    if isinstance(raw.get("k"), str):
        if raw["k"].lower() not in ("inf", "infinity"):
            raise ConfigError(f"[condition] k must be an integer or 'inf', got {raw['k']!r}")
        raw["k"] = math.inf
    return _strict(ConditionKind, raw, "condition")


RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def run_config_from_dict(raw: Dict[str, Any]) -> RunConfig:
    unknown = sorted(set(raw) - RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "base" not in raw:
        raise ConfigError("missing [base] architecture")
    data = _strict(DataConfig, raw.get("data", {}), "data")
    sched = dict(raw.get("schedule", {}))
    sched.pop("total_epochs", None)
    kwargs = dict(
        base=_arch(raw["base"], data, "base"),
        motivated=_arch(raw["motivated"], data, "motivated") if raw.get("motivated") else None,
        condition=_condition(raw.get("condition", {})),
        optimizer=_strict(OptimizerConfig, raw.get("optimizer", {}), "optimizer"),
        schedule=_strict(Schedule, sched, "schedule", total_epochs=int(raw.get("epochs", 1))),
        data=data,
    )
    for key in ("epochs", "batch_size", "seed", "mode", "ablation_counts", "depth_rule"):
        if key in raw and raw[key] is not None:
            kwargs[key] = raw[key]
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def read_document(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(read_document(path))


@dataclass(frozen=True)
class ExperimentSpec:
    template: Dict[str, Any]
    seeds: Tuple[int, ...]
    variants: Tuple[str, ...] = ("classical_base", "classical_motivated", "dual")
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "variants", tuple(self.variants))
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variant(s) {bad}; expected among {VARIANTS}")
        if "ablation_b" in self.variants and "dual" not in self.variants:
            raise ConfigError("ablation_b harvests its counts from the dual variant; add 'dual'")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        for key in ("mode", "seed", "ablation_counts"):
            if key in self.template:
                raise ConfigError(f"experiment specs set {key!r} per variant; remove it")
        run_config_from_dict({**self.template, "mode": "motivated"} if self.template.get("motivated") else self.template)

    def to_dict(self) -> Dict[str, Any]:
        return {**self.template, "seeds": list(self.seeds), "variants": list(self.variants), "threads": self.threads}

    def run_config(self, variant: str, seed: int, counts=None) -> RunConfig:
        raw = json.loads(json.dumps(self.template))
        raw["seed"] = seed
        if variant == "classical_base":
            raw["mode"] = "classical"
            raw.pop("motivated", None)
        elif variant == "classical_motivated":
            raw["mode"] = "classical"
            raw["base"] = raw.pop("motivated")
        elif variant == "dual":
            raw["mode"] = "motivated"
        elif variant == "ablation_a":
            raw["mode"] = "ablation_a"
        else:
            raw["mode"] = "ablation_b"
            raw["ablation_counts"] = list(counts)
        return run_config_from_dict(raw)


def experiment_from_dict(raw: Dict[str, Any]) -> ExperimentSpec:
    raw = dict(raw)
    seeds = raw.pop("seeds", None)
    if seeds is None:
        raise ConfigError("experiment spec needs 'seeds'")
    variants = raw.pop("variants", ("classical_base", "classical_motivated", "dual"))
    threads = raw.pop("threads", 1)
    return ExperimentSpec(raw, tuple(seeds), tuple(variants), int(threads))


def load_experiment(path) -> ExperimentSpec:
    return experiment_from_dict(read_document(path))
