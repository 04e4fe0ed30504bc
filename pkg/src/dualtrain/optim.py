"""
SGD (classic momentum, coupled weight decay) and AdamW, with their
per-parameter slots exposed as :class:`OptimizerState` so they can be
copied through a weight map. Optimizers only ever touch ``store.params``;
buffers are invisible to them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, ConfigError, NonFiniteError
from .store import ParamStore, decode_records, encode_records

SCHEDULES = ("constant", "cosine")


@dataclass
class OptimizerState:
    slot_names: Tuple[str, ...]
    slots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, store: ParamStore, slot_names: Sequence[str]) -> "OptimizerState":
        slots = {
            name: {s: np.zeros_like(p.data) for s in slot_names} for name, p in store.params.items()
        }
        return cls(tuple(slot_names), slots)

    def snapshot(self) -> bytes:
        records = [("__step__", False, np.array([float(self.step)]))]
        for name, slots in self.slots.items():
            records += [(f"{name}:{s}", True, slots[s]) for s in self.slot_names]
        return encode_records(records)

    def restore(self, blob: bytes) -> None:
        records = {name: arr for name, _, arr in decode_records(blob)}
        expected = {f"{n}:{s}": a.shape for n, sl in self.slots.items() for s, a in sl.items()}
        offenders = [n for n in expected if n not in records or records[n].shape != expected[n]]
        offenders += [n for n in records if n != "__step__" and n not in expected]
        if "__step__" not in records:
            offenders.append("__step__")
        if offenders:
            raise CheckpointError("optimizer checkpoint incompatible: " + ", ".join(offenders), offenders)
        self.step = int(records["__step__"][0])
        for name, slots in self.slots.items():
            for s in self.slot_names:
                slots[s][...] = records[f"{name}:{s}"]


def _check_finite(store: ParamStore) -> None:
    bad = [n for n, p in store.params.items() if not np.all(np.isfinite(p.grad))]
    if bad:
        raise NonFiniteError("non-finite gradients in: " + ", ".join(bad))


def sgd_step(store: ParamStore, state: OptimizerState, lr: float, momentum: float, weight_decay: float) -> None:
    """g' = g + wd*w; buf = momentum*buf + g'; w -= lr*buf; then zero grads."""
    _check_finite(store)
    for name, p in store.params.items():
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        buf = state.slots[name]["momentum"]
        buf *= momentum
        buf += g
        p.data -= lr * buf
    state.step += 1
    store.zero_grad()


def adamw_step(
    store: ParamStore,
    state: OptimizerState,
    lr: float,
    betas: Tuple[float, float],
    eps: float,
    weight_decay: float,
) -> None:
    """Bias-corrected Adam with decoupled decay; zeroes grads afterwards."""
    _check_finite(store)
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in store.params.items():
        g = p.grad
        slots = state.slots[name]
        m, v = slots["m"], slots["v"]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()


class SGD:
    slot_names = ("momentum",)

    def __init__(self, store: ParamStore, momentum: float = 0.9, weight_decay: float = 0.0):
        self.store = store
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state = OptimizerState.zeros_like(store, self.slot_names)

    def step(self, lr: float) -> None:
        sgd_step(self.store, self.state, lr, self.momentum, self.weight_decay)


class AdamW:
    slot_names = ("m", "v")

    def __init__(self, store: ParamStore, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.store = store
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = OptimizerState.zeros_like(store, self.slot_names)

    def step(self, lr: float) -> None:
        adamw_step(self.store, self.state, lr, self.betas, self.eps, self.weight_decay)


@dataclass(frozen=True)
class Schedule:
    kind: str = "cosine"
    base_lr: float = 0.1
    total_epochs: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")


def lr_at(schedule: Schedule, epoch_fraction: float) -> float:
    """Learning rate at a point in [0, 1] of the whole training timeline."""
    if not 0.0 <= epoch_fraction <= 1.0:
        raise ValueError(f"epoch_fraction must lie in [0, 1], got {epoch_fraction}")
    if schedule.kind == "constant":
        return schedule.base_lr
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch_fraction))
