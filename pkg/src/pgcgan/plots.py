"""Static figures: envelopes, embeddings, loss curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_COLORS = {"real": "tab:blue", "synthetic": "tab:orange"}
# fixed metadata keeps PNG bytes stable across runs
_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def envelope_plots(report, out_dir, max_dims: int = 6) -> list[Path]:
    out = []
    for name, sides in report.envelopes.items():
        if not sides:
            continue
        any_env = next(iter(sides.values()))
        d = min(any_env.mean.shape[1], max_dims)
        fig, axes = plt.subplots(d, 1, figsize=(6, 1.6 * d), sharex=True, squeeze=False)
        t = np.arange(any_env.mean.shape[0])
        for j in range(d):
            ax = axes[j, 0]
            for side, env in sides.items():
                c = _COLORS[side]
                ax.plot(t, env.mean[:, j], color=c, label=f"{side} (n={env.count})")
                ax.fill_between(t, env.mean[:, j] - env.std[:, j], env.mean[:, j] + env.std[:, j],
                                color=c, alpha=0.2)
            ax.set_ylabel(f"f{j}")
        axes[0, 0].set_title(f"{name}: mean ± std")
        axes[0, 0].legend(fontsize="small")
        axes[-1, 0].set_xlabel("frame")
        fig.tight_layout()
        path = Path(out_dir) / f"envelope_{name}.png"
        _save(fig, path)
        out.append(path)
    return out


def embedding_plot(coords: np.ndarray, tags, path, title: str) -> Path:
    tags = np.asarray(tags)
    fig, ax = plt.subplots(figsize=(5, 5))
    for side in ("real", "synthetic"):
        m = tags == side
        ax.scatter(coords[m, 0], coords[m, 1], s=6, alpha=0.6, color=_COLORS[side], label=side)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    return Path(path)


def loss_plot(history, path) -> Path:
    h = np.asarray(history, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4))
    if len(h):
        for col, name in ((1, "L_D"), (2, "L_G adv"), (3, "L_rec")):
            ax.plot(h[:, 0], h[:, col], label=name, lw=0.8)
        ax2 = ax.twinx()
        ax2.plot(h[:, 0], h[:, 4], color="k", ls="--", lw=0.8, label="D acc (EMA)")
        ax2.set_ylim(0, 1)
        ax2.set_ylabel("D accuracy")
        ax.set_yscale("log")
        ax.legend(loc="upper right")
    ax.set_xlabel("step")
    fig.tight_layout()
    _save(fig, path)
    return Path(path)
