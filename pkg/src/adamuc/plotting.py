"""Objective-versus-iteration figure for Adam traces."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (6.0, 3.2),
    "font.family": "serif",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "svg.fonttype": "none",
    "svg.hashsalt": "adamuc-trace",
}


def plot_trace(trace: dict, out: str | Path, z_ed: float | None = None) -> Path:
    """Write market surplus per Adam iteration as an SVG.

    ``trace`` maps column names (as written by the solver's trace CSV) to
    arrays.  The vertical axis is symmetric-log because early iterates
    carry large negative penalties.  ``z_ed`` draws the copper-plate
    dispatch bound as a dashed line.
    """
    out = Path(out)
    it = np.asarray(trace["iteration"])
    z = np.asarray(trace["z_ms"])
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(it, z, color="#1f4e79", label="market surplus (Adam iterate)")
        if "z_ctg" in trace and np.any(np.asarray(trace["z_ctg"]) > 0):
            ax.plot(it, np.asarray(trace["z_ctg"]), color="#b5651d", linewidth=0.8,
                    label="contingency penalty")
        if z_ed is not None:
            ax.axhline(z_ed, color="black", linestyle="--", linewidth=0.9,
                       label="dispatch bound $z^{ed}$")
        scale = max(1.0, float(np.nanmax(np.abs(z))) if z.size else 1.0)
        ax.set_yscale("symlog", linthresh=max(1.0, 1e-3 * scale))
        ax.set_xlabel("Adam iteration")
        ax.set_ylabel("$z^{ms}$")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
