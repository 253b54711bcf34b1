"""Rate-distortion and Elo box plots written to image files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_rd(curves: dict, path, metric: str = "ms_ssim", colour_by_timestep: bool = True) -> None:
    """``curves`` maps a label to a list of aggregate rows (dicts with ``bpp`` and ``metric``)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, rows in curves.items():
        rows = sorted(rows, key=lambda r: r["bpp"])
        xs = [r["bpp"] for r in rows]
        ys = [r[metric] for r in rows]
        if label == "naive" and colour_by_timestep:
            sc = ax.scatter(xs, ys, c=[r.get("timestep", 0) for r in rows], cmap="viridis", s=14, label=label)
            fig.colorbar(sc, ax=ax, label="denoising steps")
        else:
            ax.plot(xs, ys, "o-", label=label)
    ax.set_xlabel("bpp")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_elo(result, path) -> None:
    order = result.ranking()
    idx = [result.methods.index(m) for m in order]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.boxplot([result.samples[:, i] for i in idx], whis=1.5, showfliers=False)
    ax.set_xticks(range(1, len(order) + 1), order)
    ax.set_ylabel("Elo")
    ax.set_title(f"{result.mode} ({result.iterations} shuffles)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
