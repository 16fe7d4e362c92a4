"""Render pipeline results to PNG figures.

Figures are byte-reproducible for fixed inputs on one machine: the Agg
backend draws them, an explicit rc context pins the style, and the PNG
metadata is fixed so no timestamps or library banners leak in.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.ticker import MaxNLocator

# smallest value shown on the log axis; exact zeros clip here
FLOOR = 1e-12

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linewidth": 0.6,
    "lines.linewidth": 1.4,
    "legend.framealpha": 0.9,
    "figure.facecolor": "white",
    "savefig.facecolor": "white",
}

_METADATA = {"Software": "pumpreadout"}


def render_transmission(rows, path, *, dpi: int = 110) -> None:
    """Transmission vs pump energy for both prepared states.

    ``rows`` holds (energy_meV, T0, T1, defect, leakage) per energy,
    ascending; the leak fraction rides along as a thin dotted line.
    """
    data = np.asarray(rows, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0), constrained_layout=True)
        ax.plot(data[:, 0], data[:, 1], color="C0",
                label=r"prepared $|0\rangle$")
        ax.plot(data[:, 0], data[:, 2], color="C3", linestyle="--",
                label=r"prepared $|1\rangle$")
        ax.plot(data[:, 0], data[:, 4], color="0.45", linestyle=":",
                linewidth=1.0, label="leak fraction")
        ax.set_xlabel("pump energy (meV)")
        ax.set_ylabel("transmission probability")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="center left")
        fig.savefig(path, dpi=dpi, metadata=_METADATA)
        plt.close(fig)


def render_protocol(blocks, path, *, dpi: int = 110) -> None:
    """Residual uncertainty vs cycle count, one color per block.

    ``blocks`` is a sequence of (label, rows) where rows hold
    (n, F_feedback, F_nofeedback, drift); feedback curves draw solid
    with filled circles, no-feedback dashed with open squares.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.4), constrained_layout=True)
        for i, (label, rows) in enumerate(blocks):
            data = np.asarray(rows, dtype=float)
            color = f"C{i}"
            n = data[:, 0]
            ax.semilogy(n, np.maximum(data[:, 1], FLOOR), color=color,
                        marker="o", markersize=3.5,
                        label=f"{label}, feedback")
            ax.semilogy(n, np.maximum(data[:, 2], FLOOR), color=color,
                        marker="s", markersize=3.0, linestyle="--",
                        markerfacecolor="none",
                        label=f"{label}, no feedback")
        ax.set_xlabel("cycle $n$")
        ax.set_ylabel("residual uncertainty $F(n)$")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.legend(fontsize=7, ncols=2, loc="lower left")
        fig.savefig(path, dpi=dpi, metadata=_METADATA)
        plt.close(fig)
