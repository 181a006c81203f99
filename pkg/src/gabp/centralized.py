"""Centralized MAP estimate over the stacked system.

Used as ground truth for everything the message-passing side produces. All
agent unknowns are stacked in ascending agent id, all edge observations in
ascending ``(i, j)``, and

    x_hat = (W^{-1} + A^T R^{-1} A)^{-1} A^T R^{-1} y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from gabp import numerics
from gabp.model import PairwiseModel


class RankDeficient(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    A: np.ndarray
    W: np.ndarray
    R: np.ndarray
    y: np.ndarray
    var_offsets: np.ndarray  # length M + 1
    obs_offsets: np.ndarray  # length |E| + 1
    rank: int

    @property
    def full_column_rank(self) -> bool:
        return self.rank == self.A.shape[1]

    def var_slice(self, i: int) -> slice:
        return slice(int(self.var_offsets[i]), int(self.var_offsets[i + 1]))


@dataclass(frozen=True, eq=False)
class CentralEstimate:
    mean: np.ndarray
    cov: np.ndarray


def assemble(model: PairwiseModel, require_full_rank: bool = False) -> GlobalSystem:
    """Stack the model into ``y = A x + z``.

    A full column rank ``A`` is not needed for the estimate (the prior keeps
    the normal matrix invertible) and does not hold for e.g. scalar trees or
    difference-type observations, so by default the numerical rank is only
    recorded. Pass ``require_full_rank=True`` to raise :class:`RankDeficient`.
    """
    var_offsets = np.concatenate([[0], np.cumsum(model.dims)]).astype(int)
    obs_offsets = np.concatenate([[0], np.cumsum([e.obs_dim for e in model.edges])]).astype(int)
    n, m = int(var_offsets[-1]), int(obs_offsets[-1])
    A = np.zeros((m, n))
    y = np.zeros(m)
    for k, e in enumerate(model.edges):
        rows = slice(obs_offsets[k], obs_offsets[k + 1])
        A[rows, var_offsets[e.i]:var_offsets[e.i + 1]] = e.coef_i
        A[rows, var_offsets[e.j]:var_offsets[e.j + 1]] = e.coef_j
        y[rows] = e.obs
    W = scipy.linalg.block_diag(*[a.prior_cov for a in model.agents])
    R = scipy.linalg.block_diag(*[e.noise_cov for e in model.edges]) if model.edges else np.zeros((0, 0))

    if m:
        s = np.linalg.svd(A, compute_uv=False)
        rank = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
    else:
        rank = 0
    if require_full_rank and rank < n:
        raise RankDeficient(f"A has numerical rank {rank} < {n} columns")
    return GlobalSystem(A, W, R, y, var_offsets, obs_offsets, rank)


def information(sys: GlobalSystem) -> tuple[np.ndarray, np.ndarray]:
    """Posterior information matrix ``W^-1 + A^T R^-1 A`` and vector ``A^T R^-1 y``."""
    RinvA = numerics.spd_solve(sys.R, sys.A) if sys.A.size else sys.A
    Rinvy = numerics.spd_solve(sys.R, sys.y) if sys.y.size else sys.y
    J = numerics.spd_inverse(sys.W) + sys.A.T @ RinvA
    return numerics.symmetrize(J), sys.A.T @ Rinvy


def solve_map(sys: GlobalSystem) -> CentralEstimate:
    J, h = information(sys)
    mean = numerics.spd_solve(J, h)
    cov = numerics.spd_inverse(J)
    return CentralEstimate(mean, cov)


def marginal(est: CentralEstimate, sys: GlobalSystem, i: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= i < len(sys.var_offsets) - 1:
        raise KeyError(f"unknown agent id {i}")
    s = sys.var_slice(i)
    return est.mean[s].copy(), est.cov[s, s].copy()


def estimate(model: PairwiseModel) -> tuple[GlobalSystem, CentralEstimate]:
    sys = assemble(model)
    return sys, solve_map(sys)
