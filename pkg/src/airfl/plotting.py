"""PNG figures rendered next to the CSV outputs (Agg backend, no display)."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def plot_loss_vs_rounds(result, path) -> Path:
    """Seed-averaged training loss per scheme."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme in result.config.schemes:
        curve = result.mean_curve(scheme)
        ax.plot(np.arange(1, len(curve) + 1), curve, label=scheme)
    ax.set_xlabel("communication round")
    ax.set_ylabel("training loss")
    ax.set_title(f"{len(result.config.seeds)}-seed mean")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)


def plot_loss_vs_snr(sweep, path) -> Path:
    """Seed-averaged final loss against transmit SNR."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    cfg = sweep.config
    snrs = sorted({r[0] for r in sweep.rows})
    for scheme in cfg.schemes:
        ys = [sweep.mean_final(scheme, P) for P in sweep.points]
        ax.plot(snrs, ys, marker="o", label=scheme)
    ax.set_xlabel("transmit SNR [dB]")
    ax.set_ylabel(f"training loss after T={cfg.T}")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)
