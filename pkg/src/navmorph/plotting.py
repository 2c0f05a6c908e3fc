"""Report figures, rendered off-screen to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from navmorph.io import atomic_write_bytes_via  # noqa: E402
from navmorph.synthenv import ARENA  # noqa: E402


def _save(fig, path) -> None:
    try:
        atomic_write_bytes_via(path, lambda tmp: fig.savefig(tmp, dpi=110, bbox_inches="tight"))
    finally:
        plt.close(fig)


def loss_curve(log: list[dict], path, window: int = 25) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if log:
        ep = np.array([r["episode"] for r in log])
        total = np.array([r["total"] for r in log])
        ax.plot(ep, total, color="0.75", lw=0.8, label="total")
        if len(total) >= window:
            smooth = np.convolve(total, np.ones(window) / window, mode="valid")
            ax.plot(ep[window - 1:], smooth, color="C0", lw=1.5, label=f"{window}-episode mean")
        for key, color in (("l_re", "C1"), ("l_ac", "C2"), ("l_il", "C3")):
            ax.plot(ep, [r[key] for r in log], color=color, lw=0.6, alpha=0.6, label=key)
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("episode")
    ax.set_ylabel("loss")
    _save(fig, path)


def trajectories(outcomes, path, limit: int = 6) -> None:
    """Agent paths (solid) against teacher references (dashed) for a few episodes."""
    shown = list(outcomes)[:limit]
    cols = min(3, max(1, len(shown)))
    rows = max(1, -(-len(shown) // cols))
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.2 * rows), squeeze=False)
    for ax in axes.flat:
        ax.set_xlim(0, ARENA)
        ax.set_ylim(0, ARENA)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
    for ax, out in zip(axes.flat, shown):
        ep = out.episode
        for x0, y0, x1, y1 in ep.scene.obstacles:
            ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, color="0.6"))
        ref = ep.reference
        pos = np.array([r["position"] for r in out.records])
        ax.plot(ref[:, 0], ref[:, 1], "--", color="C2", lw=1)
        ax.plot(pos[:, 0], pos[:, 1], "-", color="C0", lw=1.2)
        ax.plot(*ep.goal, "*", color="C3", ms=9)
        ax.add_patch(plt.Circle(ep.goal, ep.success_radius, fill=False, color="C3", lw=0.6))
        ax.set_title(f"{ep.episode_id}  sr={out.report.sr:.0f}", fontsize=8)
    _save(fig, path)


def sweep_figure(rows: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    sizes = [r["n_m"] for r in rows]
    for key in ("sr", "spl", "osr"):
        ax.plot(sizes, [r[key] for r in rows], "o-", label=key.upper())
    if len(set(sizes)) > 1 and min(sizes) > 0:
        ax.set_xscale("log", base=2)
    ax.set_xticks(sizes)
    ax.set_xticklabels([str(s) for s in sizes])
    ax.set_xlabel("memory size")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    _save(fig, path)
