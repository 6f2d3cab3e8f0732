"""Figure rendering for fitted weights, CDFs, CV curves, and summaries.

Figures are drawn off-screen and written as PNG files next to the delimited
output.  The Software metadata tag is stripped so identical runs produce
identical bytes.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .model import StepCDF

_DPI = 150
_META = {"Software": None}


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=_DPI, metadata=_META, bbox_inches="tight")


def save_weights_figure(path, grid, theta, title="Estimated weights"):
    theta = np.asarray(theta, dtype=float)
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(111)
    if grid.n_dims == 2:
        positive = theta > 0
        ax.scatter(
            grid.points[~positive, 0], grid.points[~positive, 1],
            s=12, c="lightgray", marker="x", linewidths=0.8, label="zero weight",
        )
        pts = ax.scatter(
            grid.points[positive, 0], grid.points[positive, 1],
            s=20 + 2000 * theta[positive], c=theta[positive],
            cmap="viridis", edgecolors="black", linewidths=0.4,
        )
        fig.colorbar(pts, ax=ax, label="weight")
        ax.set_xlabel("coefficient 1")
        ax.set_ylabel("coefficient 2")
        ax.legend(loc="best", fontsize=8)
    elif grid.n_dims == 1:
        ax.bar(grid.points[:, 0], theta,
               width=0.8 * np.min(np.diff(np.sort(grid.points[:, 0]))) if grid.n_points > 1 else 0.5)
        ax.set_xlabel("coefficient")
        ax.set_ylabel("weight")
    else:
        ax.bar(np.arange(grid.n_points), theta)
        ax.set_xlabel("grid point index")
        ax.set_ylabel("weight")
    ax.set_title(title)
    _save(fig, path)


def save_cdf_figure(path, grid, theta, title="Marginal CDFs"):
    cdf = StepCDF(grid, np.asarray(theta, dtype=float))
    fig = Figure(figsize=(4.0 * grid.n_dims, 3.5))
    for dim in range(grid.n_dims):
        ax = fig.add_subplot(1, grid.n_dims, dim + 1)
        coords, levels = cdf.marginal(dim)
        ax.step(coords, levels, where="post")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel(f"coefficient {dim + 1}")
        ax.set_ylabel("F")
    fig.suptitle(title)
    _save(fig, path)


def save_cv_figure(path, cv, selected=None, title="Cross-validation"):
    """MSE path with a one-standard-error band and selected ridge levels."""
    mu = np.asarray(cv.mu_path, dtype=float)
    mean = cv.mean_mse
    se = cv.se_mse
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(111)
    positive = mu[mu > 0]
    linthresh = positive.min() if positive.size else 1.0
    ax.set_xscale("symlog", linthresh=linthresh)
    ax.fill_between(mu, mean - se, mean + se, alpha=0.25, label="±1 SE")
    ax.plot(mu, mean, marker=".", markersize=3, linewidth=1.0, label="mean MSE")
    for label, value in (selected or {}).items():
        ax.axvline(value, linestyle="--", linewidth=1.0, label=f"{label}: mu={value:g}")
    ax.set_xlabel("mu")
    ax.set_ylabel("validation MSE")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    _save(fig, path)


def save_summary_figure(path, rows, title="Monte Carlo accuracy"):
    """Grouped bars of RMISE by estimator for each (N, R) cell."""
    cells = []
    for row in rows:
        key = (row.n_units, row.n_grid)
        if key not in cells:
            cells.append(key)
    estimators = []
    for row in rows:
        if row.estimator not in estimators:
            estimators.append(row.estimator)
    table = {(row.n_units, row.n_grid, row.estimator): row.rmise for row in rows}

    fig = Figure(figsize=(1.5 + 1.6 * len(cells), 4.5))
    ax = fig.add_subplot(111)
    width = 0.8 / max(len(estimators), 1)
    base = np.arange(len(cells), dtype=float)
    for e_index, estimator in enumerate(estimators):
        values = [table.get(cell + (estimator,), np.nan) for cell in cells]
        ax.bar(base + e_index * width, values, width=width, label=estimator)
    ax.set_xticks(base + 0.4 - width / 2)
    ax.set_xticklabels([f"N={n}\nR={r}" for n, r in cells], fontsize=8)
    ax.set_ylabel("RMISE")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    _save(fig, path)
