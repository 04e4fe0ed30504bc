"""
Acceptance suite. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion.
"""
import json
import zlib
from pathlib import Path

import numpy as np
import pytest
from conftest import replay_trace, run_config

from dualtrain import tensor as T
from dualtrain.config import experiment_from_dict, read_document
from dualtrain.efficiency import GFLOP, MFLOP, EfficiencyRow, FlopsLedger, average_forward_flops, displayed_entries, harvest_counts
from dualtrain.experiment import run_experiment
from dualtrain.gradcheck import check_gradients
from dualtrain.motivation import ConditionKind, MotivationState, observe
from dualtrain.selftest import literal_flags
from dualtrain.trainer import load_dataset, read_trace, round_counts, train
from dualtrain.weight_map import build_map, copy_big_small, copy_small_big, extract
from dualtrain.zoo import FAMILIES, ArchConfig, Model, build, flops_forward

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"

REL_TOL = 0.03          # printed-input rounding
TRACES, K_RANGE = 100_000, (1, 8)
MAP_INPUTS = 100
GRAD_INSTANCES, GRAD_H, GRAD_TOL = 20, 1e-5, 1e-4
EQUIV_EPOCHS = 5
NON_INFERIORITY = -0.5  # accuracy points
LEDGERS = 10_000

c1 = pytest.mark.criterion(1, "metric reproduction from printed tables")
c2 = pytest.mark.criterion(2, "state machine equals literal control loop")
c3 = pytest.mark.criterion(3, "weight-map exactness for consecutive levels")
c4 = pytest.mark.criterion(4, "layer gradients match finite differences")
c5 = pytest.mark.criterion(5, "never-firing condition equals classical training")
c6 = pytest.mark.criterion(6, "dual training on spirals at desk scale")
c7 = pytest.mark.criterion(7, "ablation pipeline and forced-index invariants")
c8 = pytest.mark.criterion(8, "byte-identical repeated runs")
c9 = pytest.mark.criterion(9, "FLOPs counter and average-FLOPs bounds")


# ------------------------------------------------------------------ 1

TABLE_ROWS = json.loads((FIXTURES / "golden_metrics.json").read_text())
TABLE_CASES = [(r, k) for r in TABLE_ROWS for k in ("dual", "classical", "ratio")]


@c1
@pytest.mark.parametrize("row, entry", TABLE_CASES, ids=[f"{r['row']}:{k}" for r, k in TABLE_CASES])
def test_printed_metric(row, entry):
    er = EfficiencyRow(row["acc_base_classical"], row["acc_dual_base"], row["acc_mot_classical"],
                       row["F_XC"], row["F_XY"], row["F_YC"])
    unit = MFLOP if row["unit"] == "MFLOP" else GFLOP
    got = dict(zip(("dual", "classical", "ratio"), displayed_entries(er, unit, row["scale"])))[entry]
    want = row["printed"][entry]
    assert got is not None
    assert abs(got - want) <= REL_TOL * abs(want), f"printed {want}, recomputed {got}"


# ------------------------------------------------------------------ 2

@c2
def test_state_machine_oracle():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(TRACES):
        k = int(rng.integers(K_RANGE[0], K_RANGE[1] + 1))
        n = int(rng.integers(1, 30))
        # alternate coarse (many ties) and continuous traces
        losses = np.round(rng.random(n), 1) if i % 2 else rng.random(n)
        state, cond = MotivationState(), ConditionKind(k=k)
        mismatches += [observe(state, cond, float(v)) for v in losses] != literal_flags(losses, k)
    assert mismatches == 0


# ------------------------------------------------------------------ 3

def level_pairs():
    for fam in FAMILIES:
        shape = (2, 1, 1) if fam == "WidthMLP" else (3, 32, 32)
        for lv in range(3):
            yield pytest.param(ArchConfig(fam, lv, 10, shape), ArchConfig(fam, lv + 1, 10, shape), id=f"{fam}-L{lv}-L{lv + 1}")


@c3
@pytest.mark.parametrize("small, big", list(level_pairs()))
def test_weight_map_exact(small, big):
    wmap = build_map(small, big)
    assert all(np.all(c == 1) for c in wmap.base_coverage().values())
    assert all(np.all(c <= 1) for c in wmap.motivated_coverage().values())

    base, mot = build(small, 11), build(big, 12)
    b0, m0 = base.store.snapshot(), mot.store.snapshot()
    copy_small_big(base.store, mot.store, wmap)
    copy_big_small(base.store, mot.store, wmap)
    assert base.store.snapshot() == b0
    mot_after = mot.store.snapshot()
    copy_small_big(base.store, mot.store, wmap)
    assert mot.store.snapshot() == mot_after
    assert mot.store.snapshot() != m0 or not wmap.entries

    sub = Model(small, extract(mot.store, wmap))
    x = np.random.default_rng(3).standard_normal((MAP_INPUTS,) + small.input_shape)
    assert np.array_equal(base.forward(x, training=False).data, sub.forward(x, training=False).data)


# ------------------------------------------------------------------ 4

def _away_from_kinks(a, margin=1e-3):
    return np.where(np.abs(a) < margin, np.sign(a) * margin + (a == 0) * margin, a)


LAYERS = {
    "dense": (lambda x, w, b: T.dense(x, w, b), [(4, 5), (3, 5), (3,)]),
    "matmul": (T.matmul, [(3, 4), (4, 2)]),
    "conv2d": (lambda x, w: T.conv2d(x, w, 1, 1), [(2, 2, 5, 5), (3, 2, 3, 3)]),
    "conv2d_stride2": (lambda x, w: T.conv2d(x, w, 2, 1), [(2, 2, 5, 5), (3, 2, 3, 3)]),
    "conv2d_1x1": (lambda x, w: T.conv2d(x, w, 2, 0), [(2, 3, 5, 5), (4, 3, 1, 1)]),
    "batchnorm_train": (lambda x, g, b: T.batchnorm2d(x, g, b, np.zeros(3), np.ones(3), True), [(4, 3, 2, 2), (3,), (3,)]),
    "batchnorm_eval": (lambda x, g, b: T.batchnorm2d(x, g, b, np.full(3, 0.2), np.full(3, 1.5), False), [(2, 3, 2, 2), (3,), (3,)]),
    "layernorm": (lambda x, g, b: T.layernorm(x, g, b), [(4, 6), (6,), (6,)]),
    "relu": (T.relu, [(4, 5)]),
    "gelu": (T.gelu, [(4, 5)]),
    "global_avg_pool": (T.global_avg_pool, [(2, 3, 4, 4)]),
    "add": (T.add, [(3, 4), (4,)]),
    "mul": (T.mul, [(3, 4), (3, 1)]),
    "flatten": (T.flatten, [(2, 3, 2, 2)]),
}


@c4
@pytest.mark.parametrize("name", list(LAYERS) + ["softmax_cross_entropy"])
def test_layer_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(GRAD_INSTANCES):
        if name == "softmax_cross_entropy":
            labels = rng.integers(0, 5, size=6)
            err = check_gradients(lambda ts: T.softmax_cross_entropy(ts[0], labels), [rng.standard_normal((6, 5))], GRAD_H)
        else:
            fn, shapes = LAYERS[name]
            inputs = [rng.standard_normal(s) for s in shapes]
            if name == "relu":
                inputs = [_away_from_kinks(a) for a in inputs]
            weights = rng.standard_normal(fn(*[T.Tensor(a) for a in inputs]).shape)
            err = check_gradients(lambda ts: T.sum_all(T.mul(fn(*ts), T.Tensor(weights))), inputs, GRAD_H)
        worst = max(worst, err)
    assert worst < GRAD_TOL, f"max relative error {worst:.3e}"


# ------------------------------------------------------------------ 5

@c5
def test_never_firing_condition_equals_classical():
    def runner(cfg):
        sums = []
        rep = train(cfg, load_dataset(cfg), on_epoch_end=lambda e, base, mot: sums.append(base.store.snapshot()))
        return rep, sums

    classical, c_sums = runner(run_config(mode="classical", motivated=None, epochs=EQUIV_EPOCHS))
    never, n_sums = runner(run_config(epochs=EQUIV_EPOCHS, condition=dict(kind="consecutive_decrease", k="inf")))
    assert len(c_sums) == len(n_sums) == EQUIV_EPOCHS
    assert c_sums == n_sums
    assert classical.base_checkpoint == never.base_checkpoint
    assert [(t.loss, t.lr, t.active) for t in classical.traces] == [(t.loss, t.lr, t.active) for t in never.traces]
    assert classical.base_accuracy == never.base_accuracy
    assert never.activation_counts == [0] * EQUIV_EPOCHS and never.switch_count == 0


# ------------------------------------------------------------------ 6 and 7

@pytest.fixture(scope="module")
def spirals(tmp_path_factory):
    raw = read_document(ROOT / "configs" / "spirals_experiment.toml")
    raw["variants"] = ["classical_base", "dual", "ablation_a", "ablation_b"]
    spec = experiment_from_dict(raw)
    out = tmp_path_factory.mktemp("spirals")
    report = run_experiment(spec, out)
    return spec, out, report


def _metrics(out, variant):
    return [json.loads(p.read_text()) for p in sorted((out / variant).glob("*/metrics.json"))]


@c6
@pytest.mark.slow
def test_spirals_setup(spirals):
    spec, _, report = spirals
    t = spec.template
    assert len(spec.seeds) == 8 and t["epochs"] == 30
    assert (t["data"]["kind"], t["data"]["n"], t["data"]["num_classes"]) == ("spirals", 3000, 3)
    assert (t["base"]["family"], t["base"]["level"], t["motivated"]["level"]) == ("WidthMLP", 0, 1)
    assert report["aborted_runs"] == 0 and not report["problems"]


@c6
@pytest.mark.slow
def test_spirals_non_inferiority(spirals):
    _, _, report = spirals
    dual = report["variants"]["dual"]["base_accuracy_mean"]
    classical = report["variants"]["classical_base"]["base_accuracy_mean"]
    print(f"dual base {dual:.2f}% vs classical base {classical:.2f}%")
    assert dual >= classical + NON_INFERIORITY


@c6
@pytest.mark.slow
def test_spirals_average_flops(spirals):
    _, out, report = spirals
    runs = _metrics(out, "dual")
    assert len(runs) == 8 and all(sum(m["activation_counts"]) >= 1 for m in runs)
    d = report["variants"]["dual"]
    assert d["base_forward_flops"] < d["average_forward_flops"] < d["motivated_forward_flops"]
    for m in runs:
        f = m["flops"]
        assert f["base_forward"] < f["average_forward"] < f["motivated_forward"]


@c7
@pytest.mark.slow
def test_ablation_a_invariants(spirals):
    _, out, _ = spirals
    dirs = sorted((out / "ablation_a").iterdir())
    assert len(dirs) == 8
    for d in dirs:
        m = json.loads((d / "metrics.json").read_text())
        assert m["valid"]
        assert m["activation_counts"] == [len(f) for f in m["forced_indices"]]
        traces = read_trace(d / "trace.csv")
        assert replay_trace(traces) == m["activation_counts"]
        for t in traces:
            expect_mot = t.batch in m["forced_indices"][t.epoch]
            assert (t.active.value == "Motivated") == expect_mot


@c7
@pytest.mark.slow
def test_ablation_b_uses_harvested_counts(spirals):
    _, out, _ = spirals
    harvested = round_counts(harvest_counts([m["activation_counts"] for m in _metrics(out, "dual")]))
    runs = sorted((out / "ablation_b").iterdir())
    assert len(runs) == 8 and sum(harvested) > 0
    for d in runs:
        m = json.loads((d / "metrics.json").read_text())
        cfg = json.loads((d / "config.json").read_text())
        assert m["valid"] and tuple(cfg["ablation_counts"]) == harvested
        assert tuple(m["activation_counts"]) == harvested
        assert [len(f) for f in m["forced_indices"]] == list(harvested)
        assert replay_trace(read_trace(d / "trace.csv")) == list(harvested)


# ------------------------------------------------------------------ 8

@c8
@pytest.mark.parametrize("mode", ["classical", "motivated", "ablation_a"])
def test_repeated_runs_byte_identical(mode, tmp_path):
    cfg = run_config(mode=mode, epochs=3, **({"motivated": None} if mode == "classical" else {}))
    for name in ("a", "b"):
        train(cfg, load_dataset(cfg)).save(tmp_path / name)
    for f in ("metrics.json", "trace.csv", "config.json", "base.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


# ------------------------------------------------------------------ 9

@c9
def test_flops_hand_tally():
    tally = json.loads((FIXTURES / "resnet_l0_flops.json").read_text())
    assert sum(layer["flops"] for layer in tally["layers"]) == tally["total"]
    assert flops_forward(ArchConfig("DepthResNet", 0)) == tally["total"]
    # WidthMLP level 0, 2 features, 3 classes, two 32-wide stages of one block
    stem = (2 * 2 * 32 + 32) + (7 + 5) * 32           # fc, layernorm + gelu
    block = (2 * 32 * 32 + 32) + (7 + 5 + 1) * 32     # fc, layernorm + gelu + residual add
    proj = 2 * 32 * 32 + 32
    head = (2 * 32 * 3 + 3) + 2 * 32 * 3 + 3          # fc, class-embedding matmul, add
    mlp = stem + block + proj + block + head
    assert mlp == 8006
    assert flops_forward(ArchConfig("WidthMLP", 0, 3, (2, 1, 1))) == mlp


@c9
def test_average_flops_bounds():
    rng = np.random.default_rng(9)
    for _ in range(LEDGERS):
        base = float(rng.integers(1, 10**10))
        mot = base + float(rng.integers(0, 10**10))
        B = int(rng.integers(1, 1000))
        acts = rng.integers(0, B + 1, size=int(rng.integers(1, 60)))
        if rng.random() < 0.3:
            acts = rng.choice([0, B], size=len(acts))
        avg = average_forward_flops(FlopsLedger(base, mot, tuple(int(a) for a in acts), B))
        assert base <= avg <= mot
