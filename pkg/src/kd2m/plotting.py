"""Report figures: feature-alignment scatter, training curves, benchmark bars.

Figures are built on bare :class:`matplotlib.figure.Figure` objects (no
pyplot state) and written with a fixed SVG hash salt and no date stamp, so
identical inputs give identical files.
"""

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .linalg import sym_eig

TEACHER_COLOR = "#d62728"
STUDENT_COLOR = "#1f77b4"
VIEWPORT = 600  # SVG points

matplotlib.rcParams["svg.hashsalt"] = "kd2m"
matplotlib.rcParams["svg.fonttype"] = "path"


def _save(fig: Figure, path) -> None:
    fmt = str(path).rsplit(".", 1)[-1].lower()
    metadata = {"Date": None} if fmt == "svg" else None
    fig.savefig(path, format=fmt, metadata=metadata)


def simpleaxis(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)


def shared_pca(ZT, ZS, n_components: int = 2):
    """Project both clouds on the top principal axes of their union.

    Returns ``(PT, PS, explained)`` where ``explained`` holds the variance
    ratio of each kept axis. Axis signs are fixed so the largest-magnitude
    loading is positive.
    """
    U = np.vstack([ZT, ZS])
    mu = U.mean(axis=0)
    cov = (U - mu).T @ (U - mu) / U.shape[0]
    w, V = sym_eig(cov)
    V = V[:, :n_components]
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    V = V * np.where(flip == 0, 1.0, flip)
    total = w.clip(min=0).sum()
    explained = w[:n_components].clip(min=0) / total if total > 0 else np.zeros(n_components)
    return (ZT - mu) @ V, (ZS - mu) @ V, explained


def plot_features(ZT, ZS, path, title: str | None = None, w2: float | None = None) -> dict:
    """Scatter teacher (red) and student (blue) features in a 600x600 SVG.

    Latent spaces wider than 2 go through :func:`shared_pca`; 1-D features
    are drawn on a horizontal line. Returns the plotted coordinates and
    axis labels.
    """
    ZT = np.atleast_2d(np.asarray(ZT, dtype=np.float64))
    ZS = np.atleast_2d(np.asarray(ZS, dtype=np.float64))
    d = ZT.shape[1]
    if d > 2:
        PT, PS, ev = shared_pca(ZT, ZS)
        labels = [f"PC{k + 1} ({100 * ev[k]:.1f}% var)" for k in range(2)]
    elif d == 2:
        PT, PS = ZT, ZS
        labels = ["z0", "z1"]
    else:
        PT = np.column_stack([ZT[:, 0], np.zeros(len(ZT))])
        PS = np.column_stack([ZS[:, 0], np.zeros(len(ZS))])
        labels = ["z0", ""]

    fig = Figure(figsize=(VIEWPORT / 72, VIEWPORT / 72), dpi=72)
    ax = fig.add_subplot()
    ax.scatter(PT[:, 0], PT[:, 1], s=10, c=TEACHER_COLOR, alpha=0.6, label="teacher", gid="teacher",
               linewidths=0)
    ax.scatter(PS[:, 0], PS[:, 1], s=10, c=STUDENT_COLOR, alpha=0.6, label="student", gid="student",
               linewidths=0)
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    if title or w2 is not None:
        ax.set_title(" ".join(p for p in (title, None if w2 is None else f"W2 = {w2:.4g}") if p))
    ax.legend(loc="best", frameon=False)
    simpleaxis(ax)
    _save(fig, path)
    return {"teacher": PT, "student": PS, "labels": labels}


def plot_training_curves(logs: dict, path) -> None:
    """Per-epoch classification loss, distillation loss and test accuracy, one line per run."""
    fig = Figure(figsize=(12, 3.6), dpi=72, layout="constrained")
    axes = fig.subplots(1, 3)
    for name, log in logs.items():
        ep = [r.epoch for r in log.records]
        axes[0].plot(ep, [r.loss_c for r in log.records], marker="o", ms=3, label=name)
        axes[1].plot(ep, [r.loss_d for r in log.records], marker="o", ms=3, label=name)
        axes[2].plot(ep, [100 * r.test_acc for r in log.records], marker="o", ms=3, label=name)
    for ax, ylabel in zip(axes, ("classification loss", "distillation loss", "test accuracy (%)")):
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        simpleaxis(ax)
    axes[2].legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_bench(rows: list[dict], path) -> None:
    """Mean accuracy per method with seed-level points overlaid."""
    methods = list(dict.fromkeys(r["metric"] for r in rows))
    fig = Figure(figsize=(max(4, 0.9 * len(methods) + 1), 3.6), dpi=72, layout="constrained")
    ax = fig.add_subplot()
    for k, m in enumerate(methods):
        acc = np.array([100 * r["accuracy"] for r in rows if r["metric"] == m])
        ax.bar(k, acc.mean(), color="0.8", edgecolor="0.3")
        ax.plot(np.full(acc.size, k), acc, "k.", ms=4)
    ax.set_xticks(range(len(methods)), methods, rotation=45, ha="right")
    ax.set_ylabel("test accuracy (%)")
    lo = min(100 * r["accuracy"] for r in rows)
    ax.set_ylim(max(0.0, lo - 2.0), 100.5)
    simpleaxis(ax)
    _save(fig, path)
