"""Static SVG figures: confidence-interval forest plots and benchmark bars.

Figures are drawn on a bare ``Figure`` (no pyplot state, no display) and
saved with a fixed hash salt and without date/creator metadata, so equal
inputs give byte-identical files.
"""

from __future__ import annotations

import matplotlib as mpl
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

_METHOD_COLORS = {"DR": "#c0392b", "PI": "#2471a3", "TMLE": "#7d3c98"}
_SVG_META = {"Date": None, "Creator": None}


def _save(fig: Figure, path) -> None:
    with mpl.rc_context({"svg.hashsalt": "caprec", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata=_SVG_META)


def plot_ci(results: pd.DataFrame, path, true_n: float | None = None) -> None:
    """Forest plot of the CI for n, one facet per list pair (and condvar level).

    Within a facet each (model, method) gets a row with a horizontal interval
    and a dot at the point estimate.
    """
    required = {"listpair", "model", "method", "n", "cin.l", "cin.u"}
    missing = required - set(results.columns)
    if missing:
        raise ValueError(f"results missing column(s) {', '.join(sorted(missing))}")
    df = results.copy()
    df["listpair"] = df["listpair"].astype(str)
    has_cond = "condvar" in df.columns and df["condvar"].notna().any()
    facet_cols = ["condvar", "listpair"] if has_cond else ["listpair"]
    facets = list(df.groupby(facet_cols, sort=True))
    heights = [len(g) for _, g in facets]
    fig = Figure(figsize=(6.5, 1.0 + 0.32 * sum(heights) + 0.4 * len(facets)))
    axes = fig.subplots(len(facets), 1, sharex=True, squeeze=False,
                        gridspec_kw={"height_ratios": heights})[:, 0]
    for ax, (key, grp) in zip(axes, facets):
        grp = grp.sort_values(["model", "method"])
        ypos = np.arange(len(grp))[::-1]
        for y, (_, r) in zip(ypos, grp.iterrows()):
            color = _METHOD_COLORS.get(r["method"], "black")
            ax.hlines(y, r["cin.l"], r["cin.u"], color=color, linewidth=2)
            ax.plot([r["n"]], [y], "o", color=color, markersize=4)
        ax.set_yticks(ypos)
        ax.set_yticklabels([f"{m} {t}" for m, t in zip(grp["model"], grp["method"])], fontsize=8)
        ax.set_ylim(-0.7, len(grp) - 0.3)
        key = key if isinstance(key, tuple) else (key,)
        label = ", ".join(
            f"{name}={val}" if name == "condvar" else f"list pair ({val})"
            for name, val in zip(facet_cols, key)
        )
        ax.set_title(label, fontsize=9, loc="left")
        if true_n is not None:
            ax.axvline(true_n, color="grey", linestyle="--", linewidth=1)
        ax.grid(axis="x", linewidth=0.3)
    axes[-1].set_xlabel("estimated population size n (confidence interval)")
    fig.tight_layout()
    _save(fig, path)


def plot_metrics(metrics: pd.DataFrame, path) -> None:
    """Grouped bars of bias, RMSE and coverage: x = arm/learner, bars = method."""
    panels = [("mean_bias", "bias"), ("rmse", "RMSE"), ("coverage", "coverage")]
    df = metrics.copy()
    df["group"] = df["arm"] + "\n" + df["learner"]
    groups = list(dict.fromkeys(df["group"]))
    methods = list(dict.fromkeys(df["method"]))
    width = 0.8 / max(len(methods), 1)
    fig = Figure(figsize=(3.0 * len(panels), 3.2))
    axes = fig.subplots(1, len(panels), squeeze=False)[0]
    x = np.arange(len(groups))
    for ax, (col, title) in zip(axes, panels):
        for i, m in enumerate(methods):
            sub = df[df["method"] == m].set_index("group").reindex(groups)
            ax.bar(x + (i - (len(methods) - 1) / 2) * width, sub[col].to_numpy(),
                   width, label=m, color=_METHOD_COLORS.get(m, "grey"))
        if col == "coverage":
            ax.axhline(0.95, color="black", linestyle=":", linewidth=1)
            ax.set_ylim(0, 1.05)
        ax.axhline(0, color="black", linewidth=0.5)
        ax.set_xticks(x)
        ax.set_xticklabels(groups, fontsize=8)
        ax.set_title(title, fontsize=10)
    axes[0].legend(fontsize=8, frameon=False)
    fig.tight_layout()
    _save(fig, path)
