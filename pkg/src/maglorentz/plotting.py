"""Report figures.  Rendered off-screen to PNG next to the CSV they are drawn from."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.2,
    "legend.frameon": False,
    "savefig.dpi": 150,
})

# no timestamps or version strings in the file
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def scatter_figure(path, rho, theta, theta_grid, gamma, title=""):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 3.0))
    a1.plot(rho, theta, "k-")
    a1.set_xlabel(r"$\rho$")
    a1.set_ylabel(r"$\theta(\rho)$")
    ok = gamma > 0
    a2.loglog(theta_grid[ok], gamma[ok], "k-")
    a2.set_xlabel(r"$\theta$")
    a2.set_ylabel(r"$\Gamma(\theta)$")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def marginal_figure(path, phis, curves: dict, errors: dict = None, title=""):
    """Angular densities; ``curves`` maps label -> values on ``phis``."""
    fig, ax = plt.subplots()
    for label, y in curves.items():
        e = (errors or {}).get(label)
        if e is None:
            ax.plot(phis, y, label=label)
        else:
            ax.errorbar(phis, y, yerr=e, fmt=".", ms=3, lw=0.6, label=label)
    ax.set_xlabel(r"$\varphi$")
    ax.set_ylabel("density")
    ax.set_xlim(0, 2 * np.pi)
    ax.legend()
    if title:
        ax.set_title(title)
    return _save(fig, path)


def mode_figure(path, panels: dict, xlabel=r"$t / T_L$"):
    """One panel per regime; each maps label -> (t, value, stderr or None)."""
    fig, axes = plt.subplots(1, len(panels), figsize=(3.6 * len(panels), 3.2), squeeze=False)
    for ax, (name, curves) in zip(axes[0], panels.items()):
        for label, (t, y, e) in curves.items():
            if e is None:
                ax.plot(t, y, label=label)
            else:
                ax.errorbar(t, y, yerr=e, fmt="o", ms=3, lw=0.8, label=label)
        ax.axhline(0.0, color="0.6", lw=0.5)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(r"Re $\hat f_1$")
        ax.set_title(name)
        ax.legend()
    return _save(fig, path)


def loglog_figure(path, series: dict, xlabel=r"$\varepsilon$", ylabel="", title=""):
    """``series`` maps label -> (x, y, yerr or None)."""
    fig, ax = plt.subplots()
    for label, (x, y, e) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = y > 0
        if not np.any(ok):
            continue
        if e is None:
            ax.loglog(x[ok], y[ok], "o-", ms=3, label=label)
        else:
            ax.errorbar(x[ok], y[ok], yerr=np.asarray(e, float)[ok], fmt="o-", ms=3, label=label)
            ax.set_xscale("log")
            ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    if title:
        ax.set_title(title)
    return _save(fig, path)


def field_figure(path, values, box, title=""):
    """Spatial density (angle-integrated) of a gridded field."""
    fig, ax = plt.subplots(figsize=(4.0, 3.4))
    rho = values.sum(axis=-1) * 2 * np.pi / values.shape[-1]
    im = ax.imshow(rho.T, origin="lower", extent=(0, box[0], 0, box[1]), cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    return _save(fig, path)
