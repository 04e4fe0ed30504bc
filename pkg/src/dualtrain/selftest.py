"""
Quick in-package oracle checks, runnable without pytest (``dualtrain selftest``).

Each check returns a (passed, detail) pair; :func:`run_selftest` prints one
line per check and returns the number of failures. The full suites live in
the repository's tests directory.
"""
from __future__ import annotations

import math
import time
from typing import Callable, List, Tuple

import numpy as np

from . import tensor as T
from .efficiency import FlopsLedger, average_forward_flops
from .gradcheck import check_gradients
from .motivation import ConditionKind, MotivationState, observe
from .weight_map import build_map, copy_big_small, copy_small_big, extract
from .zoo import FAMILIES, ArchConfig, Model, build

Check = Callable[[], Tuple[bool, str]]


def literal_flags(losses, k) -> List[bool]:
    """Line-by-line rendering of the control state machine for one epoch."""
    motivated, prev, consecutive, out = False, math.inf, 0, []
    for loss in losses:
        if loss < prev:
            consecutive += 1
        else:
            consecutive = 0
        if consecutive >= k:
            if not motivated:
                motivated = True
        else:
            if motivated:
                motivated = False
        prev = loss
        out.append(motivated)
    return out


def check_state_machine(traces: int = 10_000, length: int = 40, seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(traces):
        k = int(rng.integers(1, 9))
        losses = np.round(rng.random(length), 1)  # coarse values exercise ties
        state, cond = MotivationState(), ConditionKind(k=k)
        got = [observe(state, cond, v) for v in losses]
        mismatches += got != literal_flags(losses, k)
    return mismatches == 0, f"{traces} traces, {mismatches} mismatches"


def check_gradients_all(instances: int = 3, seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    cases = {
        "dense": (lambda x, w, b: T.dense(x, w, b), [(4, 5), (3, 5), (3,)]),
        "conv2d": (lambda x, w: T.conv2d(x, w, 1, 1), [(2, 2, 5, 5), (3, 2, 3, 3)]),
        "conv2d_s2": (lambda x, w: T.conv2d(x, w, 2, 0), [(2, 2, 4, 4), (3, 2, 2, 2)]),
        "layernorm": (lambda x, g, b: T.layernorm(x, g, b), [(4, 6), (6,), (6,)]),
        "gelu": (T.gelu, [(4, 5)]),
        "bn": (
            lambda x, g, b: T.batchnorm2d(x, g, b, np.zeros(3), np.ones(3), True),
            [(4, 3, 2, 2), (3,), (3,)],
        ),
    }
    worst = 0.0
    for fn, shapes in cases.values():
        for _ in range(instances):
            inputs = [rng.standard_normal(s) for s in shapes]
            weights = rng.standard_normal(fn(*[T.Tensor(a) for a in inputs]).shape)
            err = check_gradients(lambda ts: T.sum_all(T.mul(fn(*ts), T.Tensor(weights))), inputs)
            worst = max(worst, err)
    return worst < 1e-4, f"max relative error {worst:.2e}"


def _level_pairs():
    for fam in FAMILIES:
        if fam == "WidthMLP":
            shape = (2, 1, 1)
        else:
            shape = (3, 8, 8)
        yield ArchConfig(fam, 0, 3, shape), ArchConfig(fam, 1, 3, shape)


def check_weight_maps(seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    problems = []
    for small, big in _level_pairs():
        wmap = build_map(small, big)
        wmap.validate()
        base, mot = build(small, 1), build(big, 2)
        copy_small_big(base.store, mot.store, wmap)
        sub = Model(small, extract(mot.store, wmap))
        x = rng.standard_normal((5,) + small.input_shape)
        if not np.array_equal(base.forward(x).data, sub.forward(x).data):
            problems.append(f"{small.family}: extracted forward differs")
        b0 = base.store.snapshot()
        copy_big_small(base.store, mot.store, wmap)
        if base.store.snapshot() != b0:
            problems.append(f"{small.family}: round trip not identity")
    return not problems, "; ".join(problems) or "coverage, round trip, extracted forward ok"


def check_ledger_bounds(n: int = 2000, seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        base = int(rng.integers(1, 10**6))
        mot = base + int(rng.integers(0, 10**6))
        B = int(rng.integers(1, 50))
        acts = tuple(int(v) for v in rng.integers(0, B + 1, size=int(rng.integers(1, 6))))
        avg = average_forward_flops(FlopsLedger(base, mot, acts, B))
        bad += not base <= avg <= mot
    return bad == 0, f"{n} ledgers, {bad} out of bounds"


CHECKS = {
    "state machine vs literal transcription": check_state_machine,
    "gradient checks": check_gradients_all,
    "weight-map exactness": check_weight_maps,
    "average FLOPs bounds": check_ledger_bounds,
}


def run_selftest(out=print) -> int:
    failures = 0
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not a traceback
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failures += not ok
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
    return failures
