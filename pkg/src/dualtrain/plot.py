"""Loss-over-batches SVG plot with switch markers, from a trace CSV."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trainer import Active, Switch, read_trace  # noqa: E402


def plot_trace(trace_path, out_path=None, title=None) -> Path:
    """Write an SVG of per-batch loss. Motivated batches are drawn as orange
    dots, switches to the motivated model as green ticks and returns to base
    as red ticks, epoch boundaries as faint vertical lines."""
    trace_path = Path(trace_path)
    out_path = Path(out_path) if out_path else trace_path.with_suffix(".svg")
    rows = read_trace(trace_path)
    steps = list(range(len(rows)))
    losses = [r.loss for r in rows]

    plt.rcParams["svg.hashsalt"] = "dualtrain"
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(steps, losses, color="#3465a4", lw=0.8, label="loss")
    mot = [(i, r.loss) for i, r in enumerate(rows) if r.active is Active.MOTIVATED]
    if mot:
        ax.scatter(*zip(*mot), s=8, color="#f57900", zorder=3, label="motivated batch")
    for marker, event, color in (("^", Switch.TO_MOTIVATED, "#4e9a06"), ("v", Switch.TO_BASE, "#cc0000")):
        pts = [(i, r.loss) for i, r in enumerate(rows) if event in r.switch]
        if pts:
            ax.scatter(*zip(*pts), marker=marker, s=18, color=color, zorder=4, label=event.value)
    for i, r in enumerate(rows):
        if r.batch == 0 and i:
            ax.axvline(i - 0.5, color="0.85", lw=0.6, zorder=0)
    ax.set_xlabel("batch")
    ax.set_ylabel("training loss")
    ax.set_title(title or trace_path.parent.name or trace_path.name)
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path
