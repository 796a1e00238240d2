"""SVG figures for the harness commands."""

from __future__ import annotations

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SVG_META = {"Date": None}


def _save(fig, path) -> None:
    plt.rcParams["svg.hashsalt"] = "polarbev"
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_density(profiles, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for prof in profiles:
        labels = [f"{lo:g}-{hi:g}" for lo, hi in prof.intervals]
        ax.plot(labels, prof.densities, marker="o", label=prof.kind)
    ax.set_xlabel("distance interval (m)")
    ax.set_ylabel("grids per m$^2$")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_bev(data: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(np.abs(data).sum(axis=0).T, origin="lower", aspect="auto")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_residuals(rows, header, path, columns, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = [r[0] for r in rows]
    for col in columns:
        k = header.index(col)
        ax.semilogy(xs, [max(float(r[k]), 1e-18) for r in rows], marker="o", label=col)
    ax.set_xlabel(header[0])
    ax.set_title(title, fontsize=9)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
