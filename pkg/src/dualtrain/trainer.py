"""
The dual-training loop and its ablation drivers.

One loop serves every mode. Each batch runs forward, loss, backward and an
optimizer step on the active model, then decides whether to switch:

* ``classical``: never (only the base model exists);
* ``motivated``: when the motivation flag flips;
* ``ablation_a`` / ``ablation_b``: when the next batch's forced assignment
  differs from the current model (the condition is not consulted).

A switch copies weights, then optimizer slots, through the weight map. Every
epoch starts on the base model; a run still motivated at the end of an epoch
switches back.

Trace convention: ``BatchTrace.switch`` lists the switches executed *after*
that batch's step, in order. The one exception is a switch onto the
motivated model needed before batch 0 of an epoch (ablation modes only),
which is listed first on row 0. The epoch-end return to base is always on
the epoch's last row.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Dataset, augment_batch, load_cifar10_subset, make_synthetic
from .efficiency import FlopsLedger, average_forward_flops
from .errors import ConfigError, IntegrityError, NonFiniteError
from .motivation import Motivation, gradient_norm
from .optim import SGD, AdamW, lr_at
from .weight_map import WeightMap, build_map, copy_big_small, copy_optimizer_state, copy_small_big
from .zoo import Model, build, flops_forward

log = logging.getLogger(__name__)

LossFn = Callable[[T.Tensor, np.ndarray], T.Tensor]
SwitchHook = Callable[["Switch", Model, Model, WeightMap], None]

# RNG stream tags, combined with the run seed and the epoch.
_SHUFFLE, _AUGMENT, _FORCED, _MOTIVATED_INIT = 1, 2, 3, 4


class Active(str, enum.Enum):
    BASE = "Base"
    MOTIVATED = "Motivated"


class Switch(str, enum.Enum):
    TO_MOTIVATED = "ToMotivated"
    TO_BASE = "ToBase"


@dataclass
class BatchTrace:
    epoch: int
    batch: int
    active: Active
    loss: float
    lr: float
    switch: Tuple[Switch, ...] = ()

    @property
    def switch_label(self) -> str:
        return "+".join(s.value for s in self.switch) if self.switch else "None"


TRACE_HEADER = ("epoch", "batch", "active", "loss", "lr", "switch")


@dataclass
class RunReport:
    config: RunConfig
    traces: List[BatchTrace]
    activation_counts: List[int]
    batches_per_epoch: int
    base_fwd: int
    mot_fwd: Optional[int]
    base_checkpoint: bytes
    motivated_checkpoint: Optional[bytes]
    base_accuracy: Optional[float] = None
    motivated_accuracy: Optional[float] = None
    valid: bool = True
    abort_reason: Optional[str] = None
    forced: Optional[List[List[int]]] = None

    @property
    def average_fwd(self) -> float:
        if self.mot_fwd is None or not self.activation_counts:
            return float(self.base_fwd)
        ledger = FlopsLedger(self.base_fwd, self.mot_fwd, tuple(self.activation_counts), self.batches_per_epoch)
        return average_forward_flops(ledger)

    @property
    def switch_count(self) -> int:
        return sum(len(t.switch) for t in self.traces)

    def metrics(self) -> dict:
        return {
            "mode": self.config.mode,
            "seed": self.config.seed,
            "epochs": self.config.epochs,
            "batches_per_epoch": self.batches_per_epoch,
            "valid": self.valid,
            "abort_reason": self.abort_reason,
            "base_accuracy": self.base_accuracy,
            "motivated_accuracy": self.motivated_accuracy,
            "activation_counts": list(self.activation_counts),
            "forced_indices": self.forced,
            "switch_events": self.switch_count,
            "final_loss": self.traces[-1].loss if self.traces else None,
            "flops": {
                "base_forward": self.base_fwd,
                "motivated_forward": self.mot_fwd,
                "average_forward": self.average_fwd,
            },
        }

    def metrics_json(self) -> str:
        return json.dumps(self.metrics(), indent=2, sort_keys=True) + "\n"

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t in self.traces:
            w.writerow((t.epoch, t.batch, t.active.value, repr(t.loss), repr(t.lr), t.switch_label))
        return buf.getvalue()

    def save(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n")
        (run_dir / "metrics.json").write_text(self.metrics_json())
        (run_dir / "trace.csv").write_text(self.trace_csv())
        (run_dir / "base.ckpt").write_bytes(self.base_checkpoint)
        if self.motivated_checkpoint is not None:
            (run_dir / "motivated.ckpt").write_bytes(self.motivated_checkpoint)
        return run_dir


def read_trace(path) -> List[BatchTrace]:
    """Parse a trace CSV written by :meth:`RunReport.trace_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise ConfigError(f"{path}: not a trace file (header {rows[0] if rows else None})")
    out = []
    for r in rows[1:]:
        sw = () if r[5] == "None" else tuple(Switch(s) for s in r[5].split("+"))
        out.append(BatchTrace(int(r[0]), int(r[1]), Active(r[2]), float(r[3]), float(r[4]), sw))
    return out


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def load_dataset(config: RunConfig, data_dir=None) -> Dataset:
    d = config.data
    if d.kind == "cifar10":
        directory = data_dir or d.dir
        if directory is None:
            raise ConfigError("cifar10 data needs a directory (config data.dir or --data-dir)")
        return load_cifar10_subset(directory, d.train_n, d.eval_n, d.seed, d.augment)
    return make_synthetic(d.kind, d.n, d.num_classes, d.noise, d.seed, d.input_shape, d.n_eval)


def evaluate(model: Model, data: Dataset) -> float:
    """Top-1 accuracy of ``model`` on the eval split, in [0, 1]."""
    if len(data.y_eval) == 0:
        raise ConfigError("evaluation split is empty")
    preds = model.predict(data.x_eval)
    return float(np.mean(preds == data.y_eval))


def _make_optimizer(config: RunConfig, model: Model):
    o = config.optimizer
    if o.kind == "sgd":
        return SGD(model.store, o.momentum, o.weight_decay)
    return AdamW(model.store, o.betas, o.eps, o.weight_decay)


def motivated_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, _MOTIVATED_INIT]).generate_state(1)[0])


def batches_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def draw_forced(rng: np.random.Generator, B: int, m: Optional[int] = None) -> List[int]:
    """``m`` distinct batch indices (``m`` itself uniform on [0, B] if None)."""
    if m is None:
        m = int(rng.integers(0, B + 1))
    if not 0 <= m <= B:
        raise ConfigError(f"activation count {m} outside [0, {B}]")
    return sorted(int(i) for i in rng.choice(B, size=m, replace=False))


class _Abort(Exception):
    pass


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def _run(
    config: RunConfig,
    data: Dataset,
    forced: Optional[Callable[[int, int], List[int]]],
    loss_fn: Optional[LossFn],
    on_switch: Optional[SwitchHook],
    on_epoch_end: Optional[Callable[[int, Model, Optional[Model]], None]],
) -> RunReport:
    if len(data.y_train) == 0:
        raise ConfigError("training split is empty")
    if data.input_shape != config.base.input_shape:
        raise ConfigError(f"data input shape {data.input_shape} != architecture {config.base.input_shape}")
    loss_fn = loss_fn or T.softmax_cross_entropy
    dual = config.mode != "classical"

    base = build(config.base, config.seed)
    base_opt = _make_optimizer(config, base)
    mot = mot_opt = wmap = None
    if dual:
        wmap = build_map(config.base, config.motivated, config.depth_rule)
        mot = build(config.motivated, motivated_seed(config.seed))
        mot_opt = _make_optimizer(config, mot)

    motivation = Motivation(config.condition)
    heldout = None
    if config.mode == "motivated" and motivation.needs_heldout:
        data, heldout = data.hold_out(config.batch_size, config.seed)

    n, bs, E = len(data.y_train), config.batch_size, config.epochs
    B = batches_per_epoch(n, bs)
    traces: List[BatchTrace] = []
    counts: List[int] = []
    forced_log: Optional[List[List[int]]] = [] if forced else None
    motivated = False
    report_kw = {}

    def switch(to_motivated: bool, events: list) -> None:
        nonlocal motivated
        if to_motivated:
            copy_small_big(base.store, mot.store, wmap)
            copy_optimizer_state(base_opt.state, mot_opt.state, wmap, "small_big")
            ev = Switch.TO_MOTIVATED
        else:
            copy_big_small(base.store, mot.store, wmap)
            copy_optimizer_state(mot_opt.state, base_opt.state, wmap, "big_small")
            ev = Switch.TO_BASE
        motivated = to_motivated
        events.append(ev)
        if on_switch is not None:
            on_switch(ev, base, mot, wmap)

    try:
        for epoch in range(E):
            order = np.random.default_rng([config.seed, _SHUFFLE, epoch]).permutation(n)
            aug_rng = np.random.default_rng([config.seed, _AUGMENT, epoch])
            plan = None
            pending: list = []
            if forced is not None:
                plan = set(forced(epoch, B))
                forced_log.append(sorted(plan))
                if 0 in plan:
                    switch(True, pending)
            count = 0
            for b in range(B):
                idx = order[b * bs:(b + 1) * bs]
                x, y = data.x_train[idx], data.y_train[idx]
                if data.augment:
                    x = augment_batch(x, aug_rng)
                model, opt = (mot, mot_opt) if motivated else (base, base_opt)
                lr = lr_at(config.schedule, (epoch * B + b) / (E * B))
                loss = loss_fn(model.forward(x, training=True), y)
                lv = loss.item()
                events, pending = pending, []
                row = BatchTrace(epoch, b, Active.MOTIVATED if motivated else Active.BASE, lv, lr)
                traces.append(row)
                count += motivated
                if not math.isfinite(lv):
                    raise _Abort(f"non-finite loss {lv} at epoch {epoch} batch {b}")
                T.backward(loss)
                gnorm = gradient_norm(model.store) if motivation.needs_grad_norm else None
                opt.step(lr)
                if config.mode == "motivated":
                    held_loss = None
                    if heldout is not None:
                        held_loss = loss_fn(model.forward(heldout[0], training=False), heldout[1]).item()
                    flag = motivation.update(lv, gnorm, held_loss)
                    if flag != motivated:
                        switch(flag, events)
                elif plan is not None and b + 1 < B:
                    want = (b + 1) in plan
                    if want != motivated:
                        switch(want, events)
                if b == B - 1 and motivated:
                    switch(False, events)
                row.switch = tuple(events)
            counts.append(count)
            motivation.epoch_reset()
            if on_epoch_end is not None:
                on_epoch_end(epoch, base, mot)
    except (_Abort, IntegrityError, NonFiniteError) as exc:
        log.error("run aborted: %s", exc)
        report_kw = dict(valid=False, abort_reason=str(exc))

    report = RunReport(
        config=config,
        traces=traces,
        activation_counts=counts,
        batches_per_epoch=B,
        base_fwd=flops_forward(config.base),
        mot_fwd=flops_forward(config.motivated) if dual else None,
        base_checkpoint=base.store.snapshot(),
        motivated_checkpoint=mot.store.snapshot() if dual else None,
        forced=forced_log,
        **report_kw,
    )
    if report.valid:
        report.base_accuracy = evaluate(base, data)
        if dual:
            report.motivated_accuracy = evaluate(mot, data)
    return report


def train(
    config: RunConfig,
    data: Dataset,
    loss_fn: Optional[LossFn] = None,
    on_switch: Optional[SwitchHook] = None,
    on_epoch_end=None,
) -> RunReport:
    """Run ``config`` to completion (or abort) and return its report.

    ``loss_fn(logits, labels)`` replaces the mean cross-entropy, e.g. with a
    scripted test double. ``on_switch(event, base, motivated, wmap)`` is called
    right after each switch's copies; ``on_epoch_end(epoch, base, motivated)``
    after each epoch.
    """
    if config.mode == "ablation_a":
        return run_ablation_a(config, data, loss_fn, on_switch, on_epoch_end)
    if config.mode == "ablation_b":
        return run_ablation_b(config, data, config.ablation_counts, loss_fn, on_switch, on_epoch_end)
    return _run(config, data, None, loss_fn, on_switch, on_epoch_end)


def _as_mode(config: RunConfig, mode: str, counts=None) -> RunConfig:
    if config.mode == mode and (counts is None or config.ablation_counts == tuple(counts)):
        return config
    from dataclasses import replace
    return replace(config, mode=mode, ablation_counts=None if counts is None else tuple(counts))


def run_ablation_a(config: RunConfig, data: Dataset, loss_fn=None, on_switch=None, on_epoch_end=None) -> RunReport:
    """Per epoch: m ~ U{0..B} forced motivated batches at uniform distinct indices."""
    config = _as_mode(config, "ablation_a")

    def plan(epoch, B):
        return draw_forced(np.random.default_rng([config.seed, _FORCED, epoch]), B)

    return _run(config, data, plan, loss_fn, on_switch, on_epoch_end)


def run_ablation_b(
    config: RunConfig, data: Dataset, counts: Sequence[int], loss_fn=None, on_switch=None, on_epoch_end=None
) -> RunReport:
    """Per epoch ``e``: exactly ``counts[e]`` forced motivated batches at uniform indices."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != config.epochs:
        raise ConfigError(f"need {config.epochs} activation counts, got {len(counts)}")
    B = batches_per_epoch(len(data.y_train), config.batch_size)
    bad = [c for c in counts if not 0 <= c <= B]
    if bad:
        raise ConfigError(f"activation counts {bad} outside [0, {B}]")
    config = _as_mode(config, "ablation_b", counts)

    def plan(epoch, B):
        return draw_forced(np.random.default_rng([config.seed, _FORCED, epoch]), B, counts[epoch])

    return _run(config, data, plan, loss_fn, on_switch, on_epoch_end)


def round_counts(mean_counts: Sequence[float]) -> Tuple[int, ...]:
    """Integer per-epoch counts from averaged ones (round half to even)."""
    return tuple(int(round(c)) for c in mean_counts)
