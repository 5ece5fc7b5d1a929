"""Figure rendering for evaluation reports.

The evaluate/compare commands write these PNGs next to their CSV output:
grouped bars of micro and macro F0.5 per strategy, one panel per label scope,
with whiskers showing the spread across folds.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import ComparisonRow

_BAR_METRICS = (("micro_f05", 2), ("macro_f05", 5))


def render_comparison(rows: list[ComparisonRow], out_path) -> Path:
    """Render one comparison figure; returns the written path."""
    out_path = Path(out_path)
    scopes = [s for s in ("tactics", "techniques") if any(r.scope == s for r in rows)]
    fig, axes = plt.subplots(1, max(len(scopes), 1), figsize=(5.5 * max(len(scopes), 1), 4.0), squeeze=False)
    for ax, scope in zip(axes[0], scopes):
        scoped = [r for r in rows if r.scope == scope]
        names = [r.strategy for r in scoped]
        x = np.arange(len(scoped))
        width = 0.38
        for offset, (label, idx) in enumerate(_BAR_METRICS):
            vals = [r.report.as_tuple()[idx] for r in scoped]
            errs = [r.sd[idx] for r in scoped]
            ax.bar(x + (offset - 0.5) * width, vals, width, yerr=errs, capsize=3, label=label)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_ylim(0.0, 1.05)
        ax.set_ylabel("score")
        ax.set_title(scope)
        ax.legend(fontsize=8)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
