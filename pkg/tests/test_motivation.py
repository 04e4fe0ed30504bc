import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualtrain.errors import ConfigError
from dualtrain.motivation import (
    ConditionKind,
    Motivation,
    MotivationState,
    ema_update,
    epoch_reset,
    gradient_norm,
    improved,
    observe,
)
from dualtrain.store import ParamStore


def flags(losses, k, kind="consecutive_decrease"):
    state, cond = MotivationState(), ConditionKind(kind, k)
    return [observe(state, cond, v) for v in losses]


def test_three_decreases_k2():
    state, cond = MotivationState(), ConditionKind(k=2)
    out, counters = [], []
    for v in (0.9, 0.8, 0.7):
        out.append(observe(state, cond, v))
        counters.append(state.consecutive_improve)
    assert out == [False, True, True]
    assert counters == [1, 2, 3]


def test_increase_resets_counter():
    assert flags([0.9, 0.8, 0.85, 0.8, 0.7], 2) == [False, True, False, False, True]


def test_equality_is_not_a_decrease():
    assert flags([0.5, 0.5], 1) == [True, False]


def test_nan_resets_and_warns(caplog):
    state, cond = MotivationState(), ConditionKind(k=1)
    observe(state, cond, 1.0)
    with caplog.at_level(logging.WARNING):
        assert observe(state, cond, float("nan")) is False
    assert state.consecutive_improve == 0
    assert "NaN" in caplog.text
    # the next real value compares against NaN, which is never an improvement
    assert observe(state, cond, 0.5) is False


def test_gradient_slope_needs_increase():
    assert flags([1.0, 2.0, 3.0, 2.5], 2, "gradient_slope") == [False, False, True, False]
    assert improved(ConditionKind("gradient_slope"), 1.0, -math.inf)


def test_epoch_reset():
    state = MotivationState(motivated=True, consecutive_improve=5, prev_signal=0.42)
    epoch_reset(state)
    assert state.motivated is False and state.consecutive_improve == 0
    assert state.prev_signal == 0.42
    snapshot = vars(state).copy()
    epoch_reset(state)
    assert vars(state) == snapshot


def test_ema_update_examples():
    s = MotivationState()
    assert ema_update(s, 1.0, 0.02) == 1.0
    s = MotivationState(ema=1.0)
    assert ema_update(s, 0.0, 0.02) == pytest.approx(0.98, abs=1e-15)


def test_ema_constant_stream_never_fires():
    m = Motivation(ConditionKind("ema_decrease", k=1))
    fired = [m.update(0.7) for _ in range(500)]
    assert fired[0] is True  # first observation improves on +inf
    assert not any(fired[1:])
    assert m.state.ema == pytest.approx(0.7, abs=1e-15)


def test_ema_relative_drop_threshold():
    cond = ConditionKind("ema_decrease", k=1, rel_drop=0.002)
    assert improved(cond, 0.998, 1.0)
    assert not improved(cond, 0.9981, 1.0)


def test_gradient_norm_examples(rng):
    s = ParamStore()
    s.register("a", np.zeros(2), True)
    assert gradient_norm(s) == 0.0
    s.param("a").grad[...] = [3.0, 4.0]
    assert gradient_norm(s) == 5.0
    s.register("b", rng.standard_normal((3, 4)), True)
    s.register("buf", np.ones(3), False)
    s.param("b").grad[...] = rng.standard_normal((3, 4))
    flat = np.concatenate([s.param("a").grad.ravel(), s.param("b").grad.ravel()])
    assert gradient_norm(s) == pytest.approx(float(np.linalg.norm(flat)), rel=1e-14)


def test_condition_validation():
    for bad in (dict(k=0), dict(alpha=0.0), dict(alpha=1.0), dict(rel_drop=0.0), dict(kind="mood")):
        with pytest.raises(ConfigError):
            ConditionKind(**bad)
    assert ConditionKind(k=math.inf).never_fires


def test_infinite_k_never_fires(rng):
    assert not any(flags(np.sort(rng.random(200))[::-1], math.inf))


def test_motivation_signal_routing():
    assert Motivation(ConditionKind("validation_loss")).needs_heldout
    assert Motivation(ConditionKind("gradient_slope")).needs_grad_norm
    with pytest.raises(ValueError):
        Motivation(ConditionKind("validation_loss")).update(1.0)
    with pytest.raises(ValueError):
        Motivation(ConditionKind("gradient_slope")).update(1.0)
    m = Motivation(ConditionKind("validation_loss", k=1))
    assert m.update(5.0, heldout_loss=1.0) and m.state.prev_signal == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.1, 0.2, 0.3, 0.4, 0.5]), max_size=40), st.integers(1, 7))
def test_monotone_in_k(losses, k):
    a, b = flags(losses, k), flags(losses, k + 1)
    assert all(x or not y for x, y in zip(a, b))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), max_size=30), st.integers(1, 8))
def test_motivated_implies_counter_at_least_k(losses, k):
    state, cond = MotivationState(), ConditionKind(k=k)
    for v in losses:
        if observe(state, cond, v):
            assert state.consecutive_improve >= k
