"""
Multi-variant, multi-seed experiments and their aggregate report.

Runs are written to ``<out>/<variant>/run<i>_seed<s>/``. The report is
computed from those directories alone, so ``build_report`` on a finished
experiment directory reproduces the report files byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .config import VARIANTS, ExperimentSpec
from .efficiency import (
    MFLOP,
    EfficiencyRow,
    FlopsLedger,
    acc_per_flops_classical,
    acc_per_flops_dual,
    average_forward_flops,
    efficiency_ratio,
    format_metric,
    harvest_counts,
)
from .trainer import load_dataset, round_counts, train

log = logging.getLogger(__name__)

SPEC_FILE = "experiment.json"
REPORT_FILES = ("report.json", "report.txt", "report.csv")


def run_dir(out_dir, variant: str, index: int, seed: int) -> Path:
    return Path(out_dir) / variant / f"run{index}_seed{seed}"


def _run_one(spec: ExperimentSpec, variant: str, index: int, seed: int, out_dir, data_dir, counts=None, cache=None):
    config = spec.run_config(variant, seed, counts)
    key = json.dumps(config.data.__dict__, sort_keys=True, default=str)
    data = cache.get(key) if cache is not None else None
    if data is None:
        data = load_dataset(config, data_dir)
        if cache is not None:
            cache[key] = data
    report = train(config, data)
    report.save(run_dir(out_dir, variant, index, seed))
    return report


def run_experiment(spec: ExperimentSpec, out_dir, data_dir=None, threads: Optional[int] = None) -> dict:
    """Execute every (variant, seed) run, then write and return the report.

    Ablation B runs go last: their per-epoch counts are the across-seed mean
    of the dual runs' activation counts, rounded to integers.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / SPEC_FILE).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
    threads = threads or spec.threads
    cache: dict = {}
    first = [v for v in VARIANTS if v in spec.variants and v != "ablation_b"]
    jobs = [(v, i, s) for v in first for i, s in enumerate(spec.seeds)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        reports = list(pool.map(lambda j: _run_one(spec, *j, out_dir, data_dir, cache=cache), jobs))
    if "ablation_b" in spec.variants:
        dual = [r.activation_counts for (v, _, _), r in zip(jobs, reports) if v == "dual" and r.valid]
        if not dual:
            log.error("no valid dual runs to harvest activation counts from; skipping ablation_b")
        else:
            counts = round_counts(harvest_counts(dual))
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(
                    lambda j: _run_one(spec, "ablation_b", j[0], j[1], out_dir, data_dir, counts, cache),
                    enumerate(spec.seeds),
                ))
    return write_report(out_dir)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class VariantSummary:
    name: str
    runs: List[str] = field(default_factory=list)
    metrics: List[dict] = field(default_factory=list)
    aborted: List[str] = field(default_factory=list)

    @property
    def valid(self) -> List[dict]:
        return [m for m in self.metrics if m["valid"]]


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    mean = math.fsum(values) / len(values)
    std = statistics.stdev(values) if len(values) > 1 else None
    return mean, std


def collect(out_dir) -> (Dict[str, VariantSummary], List[str]):
    """Read every run's metrics; returns summaries and file-validation problems."""
    out_dir = Path(out_dir)
    summaries, problems = {}, []
    for variant in VARIANTS:
        vdir = out_dir / variant
        if not vdir.is_dir():
            continue
        summ = VariantSummary(variant)
        for rdir in sorted(p for p in vdir.iterdir() if p.is_dir()):
            path = rdir / "metrics.json"
            try:
                m = json.loads(path.read_text())
                for key in ("valid", "base_accuracy", "activation_counts", "batches_per_epoch", "flops"):
                    m[key]
            except (OSError, ValueError, KeyError, TypeError) as exc:
                problems.append(f"{path}: {exc!r}")
                continue
            summ.runs.append(rdir.name)
            summ.metrics.append(m)
            if not m["valid"]:
                summ.aborted.append(f"{rdir.name}: {m.get('abort_reason')}")
        summaries[variant] = summ
    return summaries, problems


def _variant_block(s: VariantSummary) -> dict:
    valid = s.valid
    pct = lambda key: [None if m[key] is None else 100.0 * m[key] for m in valid]
    base_mean, base_std = _mean_std(pct("base_accuracy"))
    mot_mean, mot_std = _mean_std(pct("motivated_accuracy"))
    block = {
        "runs": len(s.metrics),
        "valid_runs": len(valid),
        "aborted": s.aborted,
        "base_accuracy_mean": base_mean,
        "base_accuracy_std": base_std,
        "motivated_accuracy_mean": mot_mean,
        "motivated_accuracy_std": mot_std,
        "base_forward_flops": valid[0]["flops"]["base_forward"] if valid else None,
        "motivated_forward_flops": valid[0]["flops"]["motivated_forward"] if valid else None,
    }
    if valid and valid[0]["flops"]["motivated_forward"] is not None:
        counts = harvest_counts([m["activation_counts"] for m in valid])
        block["mean_activation_counts"] = list(counts)
        ledger = FlopsLedger(
            valid[0]["flops"]["base_forward"], valid[0]["flops"]["motivated_forward"],
            counts, valid[0]["batches_per_epoch"],
        )
        block["average_forward_flops"] = average_forward_flops(ledger)
    return block


def _efficiency(variants: dict) -> Optional[dict]:
    need = ("classical_base", "classical_motivated", "dual")
    if not all(k in variants and variants[k]["valid_runs"] for k in need):
        return None
    cb, cm, du = (variants[k] for k in need)
    out = {"unit": "per MFLOP"}
    base_row = EfficiencyRow(
        cb["base_accuracy_mean"], du["base_accuracy_mean"], cm["base_accuracy_mean"],
        cb["base_forward_flops"], du["average_forward_flops"], cm["base_forward_flops"],
    )
    out["F_XC"], out["F_XY"], out["F_YC"] = base_row.F_XC, base_row.F_XY, base_row.F_YC
    out["base"] = {
        "acc_per_flops_dual": acc_per_flops_dual(base_row, MFLOP),
        "acc_per_flops_classical": acc_per_flops_classical(base_row, MFLOP),
        "ratio": efficiency_ratio(base_row),
    }
    return out


def build_report(out_dir) -> (dict, List[str]):
    summaries, problems = collect(out_dir)
    variants = {name: _variant_block(s) for name, s in summaries.items()}
    report = {
        "variants": variants,
        "efficiency": _efficiency(variants),
        "problems": problems,
        "aborted_runs": sum(len(s.aborted) for s in summaries.values()),
    }
    return report, problems


def _fmt(v, decimals=2):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{decimals}f}"
    return str(v)


def report_text(report: dict) -> str:
    lines = ["variant              runs  valid  base acc (%)        motivated acc (%)   avg fwd FLOPs"]
    for name, b in report["variants"].items():
        base = f"{_fmt(b['base_accuracy_mean'])} ± {_fmt(b['base_accuracy_std'])}"
        mot = f"{_fmt(b['motivated_accuracy_mean'])} ± {_fmt(b['motivated_accuracy_std'])}"
        avg = b.get("average_forward_flops", b["base_forward_flops"])
        lines.append(f"{name:<20} {b['runs']:>4}  {b['valid_runs']:>5}  {base:<19} {mot:<19} {_fmt(avg, 1)}")
    eff = report["efficiency"]
    if eff:
        e = eff["base"]
        lines += [
            "",
            f"F_XC={_fmt(eff['F_XC'], 1)}  F_XY={_fmt(eff['F_XY'], 1)}  F_YC={_fmt(eff['F_YC'], 1)}",
            f"ACC/FLOPs dual ({eff['unit']}):      {format_metric(e['acc_per_flops_dual'])}",
            f"ACC/FLOPs classical ({eff['unit']}): {format_metric(e['acc_per_flops_classical'])}",
            f"ratio:                         {format_metric(e['ratio'])}",
        ]
    if report["aborted_runs"]:
        lines += ["", f"aborted runs: {report['aborted_runs']}"]
        for name, b in report["variants"].items():
            lines += [f"  {name}/{a}" for a in b["aborted"]]
    if report["problems"]:
        lines += ["", "file problems:"] + [f"  {p}" for p in report["problems"]]
    return "\n".join(lines) + "\n"


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["runs", "valid_runs", "base_accuracy_mean", "base_accuracy_std",
            "motivated_accuracy_mean", "motivated_accuracy_std", "base_forward_flops",
            "motivated_forward_flops", "average_forward_flops"]
    w.writerow(["variant"] + cols)
    for name, b in report["variants"].items():
        w.writerow([name] + ["" if b.get(c) is None else repr(b.get(c)) for c in cols])
    return buf.getvalue()


def write_report(out_dir) -> dict:
    out_dir = Path(out_dir)
    report, _ = build_report(out_dir)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out_dir / "report.txt").write_text(report_text(report))
    (out_dir / "report.csv").write_text(report_csv(report))
    return report
