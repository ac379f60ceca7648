"""Matplotlib rendering of diagnostic figures to static files.

All figures are written to disk (SVG by default); nothing is shown
interactively.  The scree and risk curves carry vertical guides: the
automatically selected weight is dashed, the elbow suggestion dotted.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.4, 4.2)


def save_sure_plot(curve, path):
    """Risk-estimate curve against the penalty weight, minimizer dashed."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(curve.lambdas, curve.sure, color="tab:blue", label="risk estimate")
    ax.plot(curve.lambdas, curve.err, color="tab:gray", lw=0.9, label="fit error")
    ax.axvline(curve.chosen_lambda, color="tab:red", ls="--", lw=1.0,
               label=f"selected {curve.chosen_lambda:.3g}")
    ax.set_xscale("log")
    ax.set_xlabel("penalty weight")
    ax.set_ylabel("estimated prediction error")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_scree_plot(curve, path, sure_lambda=None):
    """Scree curve of the penalty value, elbow dotted, selection dashed."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    good = np.isfinite(curve.q_values) & (curve.q_values > 0)
    ax.plot(curve.lambdas[good], curve.q_values[good], color="tab:blue",
            marker=".", ms=3, lw=1.0)
    ax.axvline(curve.elbow_lambda, color="tab:green", ls=":", lw=1.2,
               label=f"elbow {curve.elbow_lambda:.3g}")
    if sure_lambda is not None:
        ax.axvline(sure_lambda, color="tab:red", ls="--", lw=1.0,
                   label=f"risk minimizer {sure_lambda:.3g}")
    ax.set_xscale("log")
    if np.any(good):
        ax.set_yscale("log")
    ax.set_xlabel("penalty weight")
    ax.set_ylabel("penalty value of the fit")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_fit_plot(estimate, path):
    """Fitted density over the observed histogram."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    grid = estimate.grid
    if estimate.histogram is not None:
        ax.bar(grid.points, estimate.histogram.heights, width=grid.delta,
               color="0.85", edgecolor="0.7", lw=0.3, label="observed histogram")
    ax.plot(grid.points, estimate.pdf, color="tab:blue", lw=1.6,
            label="latent density estimate")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_corr_heatmap(matrix, grid, path, title=""):
    """Uncentered correlation of the density errors as a heatmap."""
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    extent = [grid[0], grid[-1], grid[0], grid[-1]]
    im = ax.imshow(matrix, origin="lower", extent=extent, vmin=-1.0, vmax=1.0,
                   cmap="RdBu_r", aspect="auto")
    fig.colorbar(im, ax=ax, shrink=0.9)
    ax.set_xlabel("x")
    ax.set_ylabel("x")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
