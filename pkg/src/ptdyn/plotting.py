"""Small SVG line plots written next to the CSV tables."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no date stamp keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "ptdyn"
matplotlib.rcParams["svg.fonttype"] = "none"


def line_plot(path, x, series, *, xlabel, ylabel, title=None, logx=False, logy=False, markers=False):
    """Plot each ``name -> y`` entry of ``series`` against ``x`` into an SVG file.

    ``x`` may also be a dict with the same keys when the series do not share
    an abscissa.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        for name, y in series.items():
            xs = x[name] if isinstance(x, dict) else x
            y = np.asarray(y, dtype=float)
            if logy:
                y = np.where(y > 0, y, np.nan)
            ax.plot(xs, y, marker="o" if markers else None, markersize=3, linewidth=1.2, label=name)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        ax.grid(True, which="major", alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    finally:
        plt.close(fig)


def bar_plot(path, x, series, *, xlabel, ylabel, title=None, logy=True):
    """Grouped stick plot of per-orbital errors against orbital energy."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        for name, y in series.items():
            xs = x[name] if isinstance(x, dict) else x
            y = np.asarray(y, dtype=float)
            base = 0.0
            if logy:
                positive = y[y > 0]
                base = positive.min() / 10 if positive.size else 1e-16
                y = np.maximum(y, base)
            ax.vlines(xs, base, y, label=name, linewidth=1.0)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    finally:
        plt.close(fig)
