"""Figures for the CLI report paths.

Every function takes plain data (the same rows that go to CSV), draws on the Agg
backend and writes a PNG. PNG metadata is stripped so identical inputs give
identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "svg.hashsalt": "ruglab",
}

def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def _figure():
    return plt.subplots(layout="constrained")


# one line per source; "all" drawn dashed
_SERIES_STYLE = {"stonfi": dict(color="#1f6f8b"), "dedust": dict(color="#c2571a"),
                 "all": dict(color="#4d4d4d", ls="--")}


def _sweep(series: Mapping[str, Sequence[tuple[float, float]]], path, xlabel: str, title: str,
           step: bool) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        for name in sorted(series):
            xs = [r[0] for r in series[name]]
            ys = [r[1] for r in series[name]]
            kw = dict(_SERIES_STYLE.get(name, {}), marker="o", ms=2.5, label=name)
            if step:
                ax.step(xs, ys, where="post", **kw)
            else:
                ax.plot(xs, ys, **kw)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("fraction labeled rug")
        ax.set_ylim(0, 1.02)
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_sweep_p(series: Mapping[str, Sequence[tuple[float, float]]], path,
                 horizon_minutes: int = 60) -> Path:
    """Rug fraction against the TVL drop threshold p, one line per source."""
    return _sweep(series, path, "drop threshold p",
                  f"TVL labels vs threshold ({horizon_minutes} min horizon)", step=False)


def plot_sweep_horizon(series: Mapping[str, Sequence[tuple[int, float]]], path,
                       approach: str) -> Path:
    """Rug fraction against the prediction horizon, one line per source."""
    return _sweep(series, path, "horizon (minutes)", f"{approach} labels vs horizon", step=True)


def plot_rfe_trace(trace: Sequence[tuple[int, float]], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        ax.plot([t[0] for t in trace], [t[1] for t in trace], marker="o", ms=3, color="#4d4d4d")
        ax.invert_xaxis()
        ax.set_xlabel("features kept")
        ax.set_ylabel("validation AUC")
        ax.set_title("recursive feature elimination")
        return _save(fig, path)


def plot_importances(importances: Mapping[str, float], path, top: int = 15,
                     title: str = "feature importance") -> Path:
    """Horizontal bars, largest on top. Ties keep name order."""
    items = sorted(importances.items(), key=lambda kv: (-kv[1], kv[0]))[:top]
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        names = [k for k, _ in items][::-1]
        vals = [v for _, v in items][::-1]
        ax.barh(np.arange(len(names)), vals, color="#4d4d4d")
        ax.set_yticks(np.arange(len(names)), names, fontsize=7)
        ax.set_xlabel("normalized gain")
        ax.set_title(title)
        ax.grid(axis="y", visible=False)
        return _save(fig, path)


def plot_confusion(tn: int, fp: int, fn: int, tp: int, path, title: str = "confusion") -> Path:
    m = np.array([[tn, fp], [fn, tp]])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 3.0), layout="constrained")
        ax.imshow(m, cmap="Blues")
        ax.grid(False)
        for (i, j), v in np.ndenumerate(m):
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if v > m.max() / 2 else "black")
        ax.set_xticks([0, 1], ["pred 0", "pred 1"])
        ax.set_yticks([0, 1], ["true 0", "true 1"])
        ax.set_title(title)
        return _save(fig, path)


def plot_auc_table(rows: Sequence[Mapping], path) -> Path:
    """Grouped bars of AUC per (protocol, family), one group per protocol row label.

    Rows are report-table dicts with at least approach, protocol, family and auc.
    """
    key = lambda r: (str(r["approach"]), str(r.get("protocol") or "-"),
                     str(r.get("test_source") or ""))
    labels = sorted({key(r) for r in rows})
    families = sorted({str(r["family"]) for r in rows})
    lookup = {key(r) + (str(r["family"]),): r for r in rows}
    width = 0.8 / max(len(families), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(labels) + 2), 3.8),
                               layout="constrained")
        x = np.arange(len(labels))
        for k, fam in enumerate(families):
            vals = []
            for lab in labels:
                r = lookup.get(lab + (fam,))
                auc = r.get("auc") if r else None
                vals.append(np.nan if auc in (None, "") else float(auc))
            ax.bar(x + (k - (len(families) - 1) / 2) * width, vals, width, label=fam)
        ax.set_xticks(x, [f"{a}\n{'eval' if p == '-' else 'P' + p} {s}" for a, p, s in labels],
                      fontsize=7)
        ax.set_ylabel("AUC")
        ax.set_ylim(0.5, 1.0)
        ax.legend(ncols=min(len(families), 4), fontsize=7)
        ax.set_title("held-out AUC by protocol")
        return _save(fig, path)
