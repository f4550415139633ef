"""Static SVG figures: joint scatter plots and 1D conditional densities."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.stats import gaussian_kde  # noqa: E402

SVG_RC = {"svg.hashsalt": "cotflow", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def scatter_svg(path, points: np.ndarray, reference: np.ndarray | None = None, title: str | None = None,
                xlabel: str = "u", ylabel: str = "y") -> None:
    """Scatter of (x, y) columns, with an optional reference cloud underneath."""
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        if reference is not None:
            ax.scatter(reference[:, 0], reference[:, 1], s=1, c="0.7", label="reference", rasterized=False)
        ax.scatter(points[:, 0], points[:, 1], s=1, c="C0", label="samples")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if reference is not None:
            ax.legend(loc="upper right", markerscale=5)
        fig.tight_layout()
        _save(fig, path)


def kde1d_svg(path, values: np.ndarray, reference: np.ndarray | None = None, title: str | None = None,
              xlabel: str = "u") -> None:
    """Gaussian KDE of one column, optionally overlaid on a reference KDE."""
    values = np.asarray(values, dtype=float).ravel()
    series = [("samples", values, "C0")]
    if reference is not None:
        series.append(("reference", np.asarray(reference, dtype=float).ravel(), "k"))
    lo = min(s[1].min() for s in series)
    hi = max(s[1].max() for s in series)
    pad = 0.1 * (hi - lo) if hi > lo else 1.0
    grid = np.linspace(lo - pad, hi + pad, 400)
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        for label, v, color in series:
            if len(v) > 1 and np.ptp(v) > 0:
                ax.plot(grid, gaussian_kde(v)(grid), color=color, label=label)
            else:
                ax.axvline(v[0], color=color, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("density")
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
