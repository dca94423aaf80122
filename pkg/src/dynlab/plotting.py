"""Deterministic figures for the CLI reports (Agg backend, no software stamp in the PNG)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}
STYLE = {"figure.figsize": (5.0, 3.6), "figure.dpi": 100, "font.size": 9, "axes.grid": True,
         "grid.alpha": 0.3, "lines.linewidth": 1.2, "savefig.bbox": "standard"}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    return path


def line_plot(path, x, series, xlabel="", ylabel="", title="", logy=False, hlines=()):
    """One or more curves sharing ``x``; ``series`` maps a label to y values."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in series.items():
            y = np.asarray(y, dtype=float)
            ax.plot(np.asarray(x, dtype=float)[:len(y)], y, marker=".", label=label)
        for h in hlines:
            ax.axhline(h, color="0.4", linestyle="--", linewidth=0.8)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, path)


def histogram_plot(path, edges, heights, reference=None, xlabel="", title=""):
    """Bar histogram over ``edges`` with an optional reference density on the bin centres."""
    edges = np.asarray(edges, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(edges[:-1], heights, width=np.diff(edges), align="edge", color="0.75",
               edgecolor="0.35", linewidth=0.4)
        if reference is not None:
            mid = 0.5 * (edges[1:] + edges[:-1])
            ax.plot(mid, reference, color="C3", label="reference")
            ax.legend(loc="best")
        ax.set_xlabel(xlabel)
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def raster_plot(path, bits, bbox, title=""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        ax.imshow(np.asarray(bits, dtype=float), origin="lower", extent=bbox, cmap="Greys",
                  interpolation="nearest", vmin=0, vmax=1)
        ax.set_title(title)
        ax.grid(False)
        fig.tight_layout()
        return _save(fig, path)


def plane_plot(path, points, weights=None, title="", path_line=False):
    """Points of the complex plane, sized by ``weights`` when given; joined when ``path_line``."""
    pts = np.asarray(points, dtype=complex)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        if path_line:
            ax.plot(pts.real, pts.imag, marker=".", markersize=3)
        else:
            s = 2.0 if weights is None else 2.0 + 200.0 * np.asarray(weights) / max(np.max(weights), 1e-300)
            ax.scatter(pts.real, pts.imag, s=s, color="C0", linewidths=0)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
