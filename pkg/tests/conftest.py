import numpy as np
import pytest

from dualtrain.config import run_config_from_dict


def run_config(**overrides):
    """A small, fast run config on blobs; keyword overrides replace sections."""
    raw = dict(
        mode="motivated",
        seed=0,
        epochs=2,
        batch_size=32,
        base=dict(family="WidthMLP", level=0),
        motivated=dict(family="WidthMLP", level=1),
        condition=dict(kind="consecutive_decrease", k=2),
        optimizer=dict(kind="sgd", momentum=0.9, weight_decay=5e-4),
        schedule=dict(kind="cosine", base_lr=0.05),
        data=dict(kind="blobs", n=160, n_eval=60, num_classes=3, noise=1.0, input_shape=[2, 1, 1]),
    )
    raw.update(overrides)
    return run_config_from_dict(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def replay_trace(traces):
    """Walk a trace and check the switch bookkeeping; return per-epoch
    motivated-batch counts. Every epoch must enter and leave on the base
    model, each row's active model must match the replayed state, and the
    events must alternate."""
    from dualtrain.trainer import Active, Switch

    counts = {}
    state = None
    for row in traces:
        events = list(row.switch)
        if row.batch == 0:
            assert state in (None, Active.BASE), f"epoch {row.epoch} entered on {state}"
            state = Active.BASE
            if row.active is Active.MOTIVATED:
                assert events and events[0] is Switch.TO_MOTIVATED, f"epoch {row.epoch} row 0 lacks a leading switch"
                events.pop(0)
                state = Active.MOTIVATED
        assert row.active is state, f"epoch {row.epoch} batch {row.batch}: trace says {row.active}, replay {state}"
        counts[row.epoch] = counts.get(row.epoch, 0) + (state is Active.MOTIVATED)
        for ev in events:
            want = Switch.TO_BASE if state is Active.MOTIVATED else Switch.TO_MOTIVATED
            assert ev is want, f"epoch {row.epoch} batch {row.batch}: {ev} while {state}"
            state = Active.MOTIVATED if ev is Switch.TO_MOTIVATED else Active.BASE
    assert state in (None, Active.BASE), "run ended on the motivated model"
    return [counts[e] for e in sorted(counts)]


# ------------------------------------------------------------------
# one pass/fail line per acceptance criterion in the terminal summary

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": 0, "failed": []})
    if call.excinfo is None:
        entry["passed"] += 1
    else:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        total = e["passed"] + len(e["failed"])
        verdict = "PASS" if not e["failed"] else "FAIL"
        line = f"criterion {n} {verdict}: {e['title']} ({e['passed']}/{total} checks)"
        if e["failed"]:
            line += " failing: " + ", ".join(e["failed"])
        terminalreporter.write_line(line)
