"""
FLOPs accounting for dual training and the accuracy-per-FLOPs metrics.

Only forward passes are counted. All metric functions return ``None``
(the undefined marker) instead of dividing by a zero FLOPs or metric delta.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple

log = logging.getLogger(__name__)

MFLOP = 1e6
GFLOP = 1e9


@dataclass(frozen=True)
class FlopsLedger:
    base_fwd: float
    mot_fwd: float
    activations: Tuple[float, ...]
    batches_per_epoch: int

    def __post_init__(self):
        object.__setattr__(self, "activations", tuple(self.activations))
        B = self.batches_per_epoch
        for e, m in enumerate(self.activations):
            if not 0 <= m <= B:
                raise ValueError(f"epoch {e}: activation count {m} outside [0, {B}]")

    @property
    def epochs(self) -> int:
        return len(self.activations)


def average_forward_flops(ledger: FlopsLedger) -> float:
    """Mean forward-pass cost over a dual-training run.

    Computed in exact rational arithmetic so the result is always bracketed
    by the two model costs.
    """
    B, E = ledger.batches_per_epoch, ledger.epochs
    if B * E == 0:
        raise ValueError("ledger has no forward passes")
    base, mot = Fraction(ledger.base_fwd), Fraction(ledger.mot_fwd)
    total = sum((B - Fraction(m)) * base + Fraction(m) * mot for m in ledger.activations)
    return float(total / (B * E))


@dataclass(frozen=True)
class EfficiencyRow:
    """Accuracies in percent, FLOPs as raw per-example forward counts."""

    acc_base_classical: float
    acc_dual_base: float
    acc_mot_classical: float
    F_XC: float
    F_XY: float
    F_YC: float

    def __post_init__(self):
        if not self.F_XC <= self.F_XY <= self.F_YC:
            log.warning(
                "FLOPs ordering violated: F_XC=%s F_XY=%s F_YC=%s", self.F_XC, self.F_XY, self.F_YC
            )


def _per_unit(acc_gain: float, flops_gain: float, unit: float) -> Optional[float]:
    if flops_gain == 0:
        return None
    return acc_gain / (flops_gain / unit)


def acc_per_flops_dual(row: EfficiencyRow, unit: float = MFLOP) -> Optional[float]:
    """Accuracy gained per ``unit`` FLOPs by dual-training the base model."""
    return _per_unit(row.acc_dual_base - row.acc_base_classical, row.F_XY - row.F_XC, unit)


def acc_per_flops_classical(row: EfficiencyRow, unit: float = MFLOP) -> Optional[float]:
    """Accuracy gained per ``unit`` FLOPs by switching to the classical larger model."""
    return _per_unit(row.acc_mot_classical - row.acc_base_classical, row.F_YC - row.F_XC, unit)


def efficiency_ratio(row: EfficiencyRow) -> Optional[float]:
    dual = acc_per_flops_dual(row)
    classical = acc_per_flops_classical(row)
    if dual is None or classical is None or classical == 0:
        return None
    return dual / classical


def displayed_entries(
    row: EfficiencyRow, unit: float = MFLOP, scale: float = 1.0, decimals: int = 2
) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """The (dual, classical, ratio) triple as a results table prints it.

    Both metrics are multiplied by ``scale`` and rounded to ``decimals``; the
    ratio is then taken between the two *rounded* entries, which is how the
    printed ratio column relates to the printed metric columns.
    """
    dual = acc_per_flops_dual(row, unit)
    classical = acc_per_flops_classical(row, unit)
    dual_d = None if dual is None else round(dual * scale, decimals)
    cls_d = None if classical is None else round(classical * scale, decimals)
    ratio = None
    if dual_d is not None and cls_d:
        ratio = round(dual_d / cls_d, decimals)
    return dual_d, cls_d, ratio


def format_metric(value: Optional[float], decimals: int = 2) -> str:
    return "undefined" if value is None else f"{value:.{decimals}f}"


def harvest_counts(per_run_counts: Sequence[Sequence[int]]) -> Tuple[float, ...]:
    """Mean activation count per epoch across runs."""
    if not per_run_counts:
        raise ValueError("no runs to average")
    epochs = {len(c) for c in per_run_counts}
    if len(epochs) != 1:
        raise ValueError(f"runs disagree on epoch count: {sorted(epochs)}")
    n = len(per_run_counts)
    return tuple(float(Fraction(sum(col), n)) for col in zip(*per_run_counts))
