"""Dense linear-algebra kernels shared by the rest of the package.

Everything here works on small dense ``numpy`` arrays. Inverses are always
realized as Cholesky solves; the only place an explicit inverse is formed is
:func:`spd_inverse`, used when a covariance has to be handed back to a caller.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

SYM_RTOL = 1e-12


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Cholesky factorization hit a nonpositive pivot."""


class NonConvergence(RuntimeError):
    """An iterative procedure exhausted its iteration budget."""


def _check_symmetric(S: np.ndarray, rtol: float = SYM_RTOL) -> None:
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    scale = max(np.abs(S).max(initial=0.0), 1.0)
    if np.abs(S - S.T).max(initial=0.0) > rtol * scale:
        raise ValueError("matrix is not symmetric within tolerance")


def cholesky(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``S``; raises :class:`NotPositiveDefinite`."""
    S = np.asarray(S, dtype=float)
    _check_symmetric(S)
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def spd_solve(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``S @ X = B`` for symmetric positive-definite ``S``.

    ``B`` may be a vector or a matrix; the result has the same shape.
    """
    L = cholesky(S)
    B = np.asarray(B, dtype=float)
    return scipy.linalg.cho_solve((L, True), B, check_finite=False)


def spd_inverse(S: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix via its Cholesky factor, symmetrized."""
    X = spd_solve(S, np.eye(np.shape(S)[0]))
    return symmetrize(X)


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def min_eigen_sym(S: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    S = np.asarray(S, dtype=float)
    _check_symmetric(S, rtol=1e-9)
    if S.size == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(symmetrize(S))[0])


def psd_slack(S: np.ndarray) -> float:
    # eigenvalues down to -1e-10 * (1 + ||S||_F) count as zero
    return 1e-10 * (1.0 + frob_norm(S))


def is_psd(S: np.ndarray) -> bool:
    return min_eigen_sym(S) >= -psd_slack(S)


def is_pd(S: np.ndarray) -> bool:
    try:
        cholesky(symmetrize(np.asarray(S, dtype=float)))
    except NotPositiveDefinite:
        return False
    return min_eigen_sym(S) > 0.0


def frob_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(np.asarray(M, dtype=float))))


def spectral_radius(M: np.ndarray, tol: float = 1e-8) -> float:
    """Largest eigenvalue modulus of a square matrix.

    Method: the sparsity graph of ``M`` is split into strongly connected
    components, which puts ``M`` in block-triangular form under a symmetric
    permutation; the spectrum is the union of the diagonal blocks' spectra.
    Each block is handled by a dense LAPACK eigensolve (no randomness, so the
    result is deterministic). Singleton components contribute ``|M[i, i]|``
    exactly, which is what makes nilpotent message-dependency matrices come out
    as exactly ``0.0`` instead of an ``eps**(1/k)`` artifact.

    ``tol`` is the absolute accuracy requested. Dense eigensolves of the sizes
    handled here are accurate far below the default; a ``NonConvergence`` is
    raised if LAPACK fails to converge.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = M.shape[0]
    if n == 0:
        return 0.0
    n_comp, labels = connected_components(csr_matrix(M != 0), directed=True, connection="strong")
    rho = 0.0
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        if idx.size == 1:
            rho = max(rho, abs(M[idx[0], idx[0]]))
            continue
        block = M[np.ix_(idx, idx)]
        try:
            ev = np.linalg.eigvals(block)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"eigensolver failed: {exc}") from None
        rho = max(rho, float(np.max(np.abs(ev))))
    return float(rho)
