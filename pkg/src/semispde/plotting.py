"""Figures for CLI reports.  Always renders off-screen to files."""
from __future__ import annotations

import functools
import threading
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

# rc settings are global, so figures are drawn one at a time
_LOCK = threading.RLock()

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    # fixed metadata keeps the files byte-stable between runs
    "svg.hashsalt": "semispde",
}


def _locked(draw):
    @functools.wraps(draw)
    def wrapper(*args, **kwargs):
        with _LOCK, plt.rc_context(STYLE):
            return draw(*args, **kwargs)

    return wrapper


def _figure():
    fig = Figure()
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot()


def save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    return path


@_locked
def loglog(path, x, series: dict, xlabel: str, ylabel: str, title: str = "", reference_slope: float | None = None):
    """One log-log line per named series, optionally with a reference slope."""
    fig, ax = _figure()
    x = np.asarray(x, dtype=float)
    for name, y in series.items():
        ax.loglog(x, np.asarray(y, dtype=float), "o-", label=name)
    if reference_slope is not None and series:
        y0 = np.asarray(next(iter(series.values())), dtype=float)
        ax.loglog(x, y0[0] * (x / x[0]) ** reference_slope, "k--", lw=0.8, label=f"slope {reference_slope:g}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    return save(fig, path)


@_locked
def ratio_sweep(path, h, ratios: np.ndarray, ylabel: str = "ratio", title: str = ""):
    """Per-instance ratios against ``h`` with the per-level maximum marked."""
    fig, ax = _figure()
    h = np.asarray(h, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    for k in range(ratios.shape[1]):
        ax.semilogx(h, ratios[:, k], "-", color="0.7", lw=0.8)
    ax.semilogx(h, np.nanmax(ratios, axis=1), "ko-", label="max over instances")
    ax.set_xlabel("h")
    ax.set_ylabel(ylabel)
    ax.set_ylim(bottom=0)
    if title:
        ax.set_title(title)
    ax.legend()
    return save(fig, path)


@_locked
def hoelder_cover(path, lhs, bound_max):
    """Measured interior energy against the fitted three-branch bound."""
    fig, ax = _figure()
    lhs = np.ravel(np.asarray(lhs, dtype=float))
    top = np.ravel(np.asarray(bound_max, dtype=float))
    ax.loglog(top, lhs, "o")
    lo, hi = min(top.min(), lhs.min()), max(top.max(), lhs.max())
    ax.loglog([lo, hi], [lo, hi], "k--", lw=0.8, label="equality")
    ax.set_xlabel("fitted bound")
    ax.set_ylabel("interior energy")
    ax.legend()
    return save(fig, path)


@_locked
def trajectory(path, x, times, states, title: str = ""):
    """Space-time image of a one-dimensional trajectory."""
    fig, ax = _figure()
    im = ax.pcolormesh(np.asarray(x), np.asarray(times), np.asarray(states), shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    return save(fig, path)


@_locked
def field(path, values, title: str = ""):
    """Heat map of a two-dimensional primal array."""
    fig, ax = _figure()
    im = ax.imshow(np.asarray(values).T, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    return save(fig, path)


@_locked
def lines(path, x, series: dict, xlabel: str, ylabel: str, title: str = ""):
    fig, ax = _figure()
    for name, y in series.items():
        ax.plot(np.asarray(x), np.asarray(y), label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    return save(fig, path)
