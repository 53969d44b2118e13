"""Static SVG rendering of spectra, sweeps and decay curves.

Output is deterministic: a fixed hash salt replaces matplotlib's
per-process ids and the date metadata is stripped, so rendering the
same data twice gives byte-identical SVG.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import read_csv

__all__ = ["render_plot", "PLOT_KINDS"]

PLOT_KINDS = ("spectrum", "decay", "sweep")

_SALT = "dressedspin"


class PlotSpecError(ValueError):
    """Plot request does not match the data file's schema."""


def _figure():
    plt.rcParams["svg.hashsalt"] = _SALT
    return plt.figure(figsize=(6.0, 4.0), dpi=100)


def _finish(fig, out_path):
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_plot(data_path: str, spec: dict, out_path: str) -> None:
    """Render one data file to SVG.

    ``spec`` requires ``kind`` (spectrum | decay | sweep) and accepts
    ``title``.  Column roles are inferred from the file schema written
    by the experiment runners.
    """
    kind = spec.get("kind")
    if kind not in PLOT_KINDS:
        raise PlotSpecError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    names, units, data = read_csv(data_path)
    fig = _figure()
    ax = fig.add_subplot(111)
    title = spec.get("title", "")

    if kind == "spectrum":
        _require(names, ("probe_frequency", "contrast"), kind)
        x, y = data["probe_frequency"], data["contrast"]
        err = data.get("stderr")
        _plot_xy(ax, x, y, err)
        ax.set_xlabel("probe frequency (MHz)")
        ax.set_ylabel("dPL/PL")
    elif kind == "decay":
        _require(names, ("time", "signal"), kind)
        x, y = data["time"], data["signal"]
        err = data.get("stderr")
        _plot_xy(ax, x, y, err)
        ax.set_xlabel("time (us)")
        ax.set_ylabel("signal")
    else:
        _require(names, ("control",), kind)
        x = data["control"]
        unit = units[names.index("control")]
        branches = [n for n in names if n.startswith("peak_")]
        if not branches:
            raise PlotSpecError("sweep file carries no peak columns")
        if x.size:
            for name in branches:
                y = data[name]
                mask = np.isfinite(y)
                ax.plot(x[mask], y[mask], marker="o", ms=3.5, lw=1.0, label=name.removeprefix("peak_"))
            ax.legend(frameon=False, fontsize=8)
        else:
            ax.annotate("no data", (0.5, 0.5), xycoords="axes fraction", ha="center", va="center")
        ax.set_xlabel(f"control ({unit})")
        ax.set_ylabel("peak position (MHz)")

    if title:
        ax.set_title(title)
    fig.tight_layout()
    _finish(fig, out_path)


def _plot_xy(ax, x, y, err):
    if x.size == 0:
        ax.annotate("no data", (0.5, 0.5), xycoords="axes fraction", ha="center", va="center")
        return
    if err is not None and np.any(err > 0):
        ax.errorbar(x, y, yerr=err, fmt="o", ms=2.5, lw=0.8, elinewidth=0.6, capsize=0)
    else:
        ax.plot(x, y, marker="o", ms=2.5, lw=0.8)


def _require(names, needed, kind):
    missing = [n for n in needed if n not in names]
    if missing:
        raise PlotSpecError(f"{kind} plot needs columns {missing}, file has {names}")
