"""PNG figures for ensemble runs; needs the optional matplotlib dependency."""
from __future__ import annotations

import io

import numpy as np

from .errors import ConfigError

MAX_PATHS_DRAWN = 20


def _figure():
    try:
        from matplotlib.backends.backend_agg import FigureCanvasAgg
        from matplotlib.figure import Figure
    except ImportError:
        raise ConfigError("figures need matplotlib; install the 'plot' extra") from None
    fig = Figure(figsize=(6.0, 4.0), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _png(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    return buf.getvalue()


def slow_path_figure(paths, averaged) -> bytes:
    fig = _figure()
    ax = fig.add_subplot()
    for p in paths[:MAX_PATHS_DRAWN]:
        ax.plot(p.tbar, p.c, lw=0.6, alpha=0.5, color="tab:blue")
    ax.plot(averaged.tbar, averaged.cbar, lw=2.0, color="k", label="averaged ODE")
    ax.set_xlabel("slow time")
    ax.set_ylabel("speed")
    ax.legend()
    fig.tight_layout()
    return _png(fig)


def haff_figure(paths, haff: dict) -> bytes:
    fig = _figure()
    ax = fig.add_subplot()
    good = [p for p in paths if p.complete]
    t_end = min(float(p.t[-1]) for p in good)
    grid = np.linspace(0.0, t_end, 256)
    inv = np.mean([np.interp(grid, p.t, 1.0 / p.c) for p in good], axis=0)
    ax.plot(grid, inv, lw=2.0, label="ensemble mean of 1/c")
    ax.plot(grid, haff["theoretical_intercept"] + haff["theoretical_slope"] * grid,
            "k--", lw=1.0, label="Haff line")
    ax.set_xlabel("physical time")
    ax.set_ylabel("1 / speed")
    ax.legend()
    fig.tight_layout()
    return _png(fig)


def ensemble_figures(paths_by_eps: dict, averaged, haff: dict | None) -> dict[str, bytes]:
    out = {}
    for eps, paths in paths_by_eps.items():
        out[f"slow_paths_eps{eps:g}.png"] = slow_path_figure(paths, averaged)
        if haff is not None:
            out[f"haff_eps{eps:g}.png"] = haff_figure(paths, haff)
    return out
