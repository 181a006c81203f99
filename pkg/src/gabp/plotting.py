"""PNG figures for the CLI report paths.

Kept out of the numerical modules; matplotlib is imported on first use and
always with the non-interactive Agg backend.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _positive(values: Sequence[float]) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    return np.where(a > 0, a, np.nan)


def trace_figure(trace, path: str | Path, title: str = "") -> Path:
    """Per-round mean and information deltas on a log scale."""
    plt = _pyplot()
    rounds = [r.round for r in trace.records]
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.semilogy(rounds, _positive([r.max_mean_delta for r in trace.records]), "o-", ms=3, label="max mean delta")
    ax.semilogy(rounds, _positive([r.max_info_delta for r in trace.records]), "s-", ms=3, label="max info delta")
    ax.set_xlabel("round")
    ax.set_ylabel("change")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def analysis_figure(residuals: Sequence[float], Q: np.ndarray, rho: float, path: str | Path) -> Path:
    """Fixed-point residual history next to the spectrum of Q and the unit circle."""
    plt = _pyplot()
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    left.semilogy(np.arange(1, len(residuals) + 1), _positive(residuals), "o-", ms=3)
    left.set_xlabel("iteration")
    left.set_ylabel("||G(C) - C||")
    left.grid(True, which="both", alpha=0.3)

    t = np.linspace(0, 2 * np.pi, 400)
    right.plot(np.cos(t), np.sin(t), "k--", lw=0.8)
    if Q.size:
        ev = np.linalg.eigvals(Q)
        right.plot(ev.real, ev.imag, "x", color="C3")
    right.set_aspect("equal")
    right.set_xlabel("Re")
    right.set_ylabel("Im")
    right.set_title(f"eig(Q), rho = {rho:.6g}")
    right.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
