"""Render benchmark CSV rows as throughput-vs-threads figures."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

MARKERS = {"vbr": "o", "ebr": "s", "none": "^"}


def plot_throughput(rows: list[dict], out_path) -> Path:
    """One panel per (structure, profile); one line per scheme.

    ``rows`` are dicts as returned by :func:`vbr.bench.read_csv`.
    """
    panels = sorted({(r["structure"], r["profile"]) for r in rows})
    if not panels:
        raise ValueError("no benchmark rows to plot")
    cols = min(3, len(panels))
    nrows = -(-len(panels) // cols)
    fig, axes = plt.subplots(nrows, cols, figsize=(4.2 * cols, 3.2 * nrows), squeeze=False)
    for ax, (ds, prof) in zip(axes.flat, panels):
        series = defaultdict(list)
        for r in rows:
            if r["structure"] == ds and r["profile"] == prof:
                series[r["scheme"]].append((r["threads"], r["mops"]))
        for scheme, pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker=MARKERS.get(scheme, "x"), label=scheme)
        ax.set_title(f"{ds}, {prof}")
        ax.set_xlabel("threads")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_ylabel("Mops/s")
        ax.grid(alpha=0.3)
        ax.legend(fontsize="small")
    for ax in list(axes.flat)[len(panels):]:
        ax.axis("off")
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
