"""
Motivation conditions: per-batch predicates whose satisfaction for ``k``
consecutive batches puts training in the motivated state.

The counter logic is shared by every condition; conditions differ only in
which scalar they watch and what counts as an improvement:

==========================  ==========================  =======================
kind                        signal                      improvement
==========================  ==========================  =======================
``consecutive_decrease``    training loss               strictly lower
``ema_decrease``            EMA of training loss        drop of >= ``rel_drop``
``validation_loss``         loss on a held-out batch    strictly lower
``gradient_slope``          global gradient L2 norm     strictly higher
==========================  ==========================  =======================
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError
from .store import ParamStore

log = logging.getLogger(__name__)

CONDITIONS = ("consecutive_decrease", "ema_decrease", "validation_loss", "gradient_slope")


@dataclass(frozen=True)
class ConditionKind:
    kind: str = "consecutive_decrease"
    k: float = 3
    alpha: float = 0.02
    rel_drop: float = 0.002

    def __post_init__(self):
        if self.kind not in CONDITIONS:
            raise ConfigError(f"unknown condition {self.kind!r}; expected one of {CONDITIONS}")
        if not self.k >= 1:
            raise ConfigError(f"k must be >= 1 (math.inf disables the condition), got {self.k}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.rel_drop > 0.0:
            raise ConfigError(f"rel_drop must be positive, got {self.rel_drop}")

    @property
    def never_fires(self) -> bool:
        return math.isinf(self.k)


@dataclass
class MotivationState:
    motivated: bool = False
    consecutive_improve: int = 0
    prev_signal: float = math.inf
    ema: Optional[float] = None
    activation_log: List[int] = field(default_factory=list)


def improved(cond: ConditionKind, signal: float, prev: float) -> bool:
    if math.isnan(signal):
        return False
    if cond.kind == "gradient_slope":
        return signal > prev
    if cond.kind == "ema_decrease":
        return signal <= (1.0 - cond.rel_drop) * prev
    return signal < prev


def observe(state: MotivationState, cond: ConditionKind, signal: float) -> bool:
    """Feed one batch's signal; returns the new motivated flag."""
    signal = float(signal)
    if improved(cond, signal, state.prev_signal):
        state.consecutive_improve += 1
    else:
        if math.isnan(signal):
            log.warning("NaN motivation signal; resetting consecutive-improve counter")
        state.consecutive_improve = 0
    state.motivated = state.consecutive_improve >= cond.k
    state.prev_signal = signal
    return state.motivated


def epoch_reset(state: MotivationState) -> None:
    """Every epoch starts non-motivated; the previous signal carries over."""
    state.motivated = False
    state.consecutive_improve = 0


def ema_update(state: MotivationState, loss: float, alpha: float) -> float:
    if state.ema is None:
        state.ema = float(loss)
    else:
        state.ema = alpha * float(loss) + (1.0 - alpha) * state.ema
    return state.ema


def gradient_norm(store: ParamStore) -> float:
    """Euclidean norm of all parameter gradients concatenated."""
    total = 0.0
    for p in store.params.values():
        total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


class Motivation:
    """A condition plus its running state, fed once per training batch."""

    def __init__(self, cond: ConditionKind):
        self.cond = cond
        self.state = MotivationState()

    @property
    def needs_grad_norm(self) -> bool:
        return self.cond.kind == "gradient_slope"

    @property
    def needs_heldout(self) -> bool:
        return self.cond.kind == "validation_loss"

    def signal(self, loss: float, grad_norm: Optional[float] = None, heldout_loss: Optional[float] = None) -> float:
        kind = self.cond.kind
        if kind == "ema_decrease":
            return ema_update(self.state, loss, self.cond.alpha)
        if kind == "gradient_slope":
            if grad_norm is None:
                raise ValueError("gradient_slope condition needs the gradient norm")
            return grad_norm
        if kind == "validation_loss":
            if heldout_loss is None:
                raise ValueError("validation_loss condition needs the held-out loss")
            return heldout_loss
        return loss

    def update(self, loss: float, grad_norm: Optional[float] = None, heldout_loss: Optional[float] = None) -> bool:
        return observe(self.state, self.cond, self.signal(loss, grad_norm, heldout_loss))

    def epoch_reset(self) -> None:
        epoch_reset(self.state)
