"""Convergence analysis of the message recursions.

The information matrices of the factor-to-variable messages evolve on their
own, independently of the data, through the map

    G(C)_{f_ij -> i} = coef_i^T [R_ij + coef_j (W_j^{-1} + sum_{k in N(j)\\i} C_{f_kj -> j})^{-1} coef_j^T]^{-1} coef_i,

which has a unique positive-definite fixed point ``C*`` reached from any PSD
start. With the information matrices frozen at ``C*`` the stacked
variable-to-factor means follow the affine recursion ``v <- -Q v + b``, so the
means converge for every start iff the spectral radius of ``Q`` is below one.

States of ``G`` are dicts keyed by ``(target, other)`` in canonical message
order. The per-edge sums are taken by direct indexing; no selection matrices
are built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from gabp import numerics
from gabp.engine import upper_block
from gabp.model import PairwiseModel, directed_messages

Key = tuple[int, int]
InfoMatrixState = dict[Key, np.ndarray]

DEFAULT_FP_TOL = 1e-12
DEFAULT_FP_MAX_ITERS = 500
DEFAULT_RHO_TOL = 1e-8
INDETERMINATE_BAND = 1e-6


@dataclass(eq=False)
class FixedPointReport:
    c_star: InfoMatrixState
    v2f_star: InfoMatrixState
    iterations: int
    residual_history: list[float]

    def contraction_ratios(self) -> list[float]:
        h = self.residual_history
        return [h[k] / h[k - 1] for k in range(1, len(h)) if h[k - 1] > 0]


@dataclass(eq=False)
class QSystem:
    Q: np.ndarray
    b: np.ndarray
    ordering: list[Key]
    offsets: np.ndarray

    def block(self, row: Key, col: Key) -> np.ndarray:
        r, c = self.ordering.index(row), self.ordering.index(col)
        return self.Q[self.offsets[r]:self.offsets[r + 1], self.offsets[c]:self.offsets[c + 1]]


@dataclass(eq=False)
class ConvergenceVerdict:
    rho: float
    converges: bool
    margin: float
    fixed_mean: np.ndarray | None
    report: FixedPointReport
    qsys: QSystem

    @property
    def indeterminate(self) -> bool:
        return abs(1.0 - self.rho) < INDETERMINATE_BAND


def zero_state(model: PairwiseModel) -> InfoMatrixState:
    return {dm.key: np.zeros((model.agents[dm.agent].dim,) * 2) for dm in directed_messages(model)}


def upper_state(model: PairwiseModel) -> InfoMatrixState:
    return {dm.key: upper_block(model, dm.agent, dm.other) for dm in directed_messages(model)}


def v2f_information(model: PairwiseModel, C: InfoMatrixState, source: int, other: int) -> np.ndarray:
    """``W_s^{-1} + sum_{k in N(s)\\other} C_{f_ks -> s}``."""
    lam = model.prior_info[source].copy()
    for k in model.adjacency[source]:
        if k != other:
            lam += C[(source, k)]
    return numerics.symmetrize(lam)


def apply_g(model: PairwiseModel, C: InfoMatrixState) -> InfoMatrixState:
    out = {}
    for dm in directed_messages(model):
        t, s = dm.agent, dm.other
        e = model.edges[dm.edge]
        Ct, Cs = e.coef_for(t), e.coef_for(s)
        lam_s = v2f_information(model, C, s, t)
        S = numerics.symmetrize(e.noise_cov + Cs @ numerics.spd_solve(lam_s, Cs.T))
        out[dm.key] = numerics.symmetrize(Ct.T @ numerics.spd_solve(S, Ct))
    return out


def state_distance(A: InfoMatrixState, B: InfoMatrixState) -> float:
    """Frobenius norm of the difference of the two block-diagonal matrices."""
    return float(np.sqrt(sum(numerics.frob_norm(A[k] - B[k]) ** 2 for k in A)))


def state_norm(C: InfoMatrixState) -> float:
    return float(np.sqrt(sum(numerics.frob_norm(v) ** 2 for v in C.values())))


def fixed_point(model: PairwiseModel, tol: float = DEFAULT_FP_TOL,
                max_iters: int = DEFAULT_FP_MAX_ITERS, init: str = "zero") -> FixedPointReport:
    """Iterate ``G`` until successive states differ by less than ``tol``.

    The difference is measured in Frobenius norm over all blocks and compared
    against ``tol * max(1, ||C||_F)``, so badly scaled models are not asked for
    more digits than double precision holds.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if init == "zero":
        C = zero_state(model)
    elif init == "upper":
        C = upper_state(model)
    else:
        raise ValueError(f"unknown init {init!r}")
    history: list[float] = []
    for it in range(1, max_iters + 1):
        C_next = apply_g(model, C)
        delta = state_distance(C_next, C)
        history.append(delta)
        C = C_next
        if delta < tol * max(1.0, state_norm(C)):
            break
    else:
        raise numerics.NonConvergence(
            f"information-matrix iteration did not reach tol={tol:g} in {max_iters} steps "
            f"(last delta {history[-1]:.3e})")
    v2f_star = {dm.key: v2f_information(model, C, dm.agent, dm.other) for dm in directed_messages(model)}
    return FixedPointReport(C, v2f_star, it, history)


def bounds(model: PairwiseModel) -> dict[Key, tuple[np.ndarray, np.ndarray]]:
    """Per-message ``(U, L)`` with ``L <= G(C) <= U`` for every PSD ``C``.

    ``U = coef_t^T R^{-1} coef_t`` is the no-uncertainty limit at the source;
    ``L = coef_t^T (R + coef_s W_s coef_s^T)^{-1} coef_t`` is ``G(0)``.
    """
    out = {}
    for dm in directed_messages(model):
        e = model.edges[dm.edge]
        Ct, Cs = e.coef_for(dm.agent), e.coef_for(dm.other)
        W_s = model.agents[dm.other].prior_cov
        S = numerics.symmetrize(e.noise_cov + Cs @ W_s @ Cs.T)
        L = numerics.symmetrize(Ct.T @ numerics.spd_solve(S, Ct))
        out[dm.key] = (upper_block(model, dm.agent, dm.other), L)
    return out


def assemble_q(model: PairwiseModel, report: FixedPointReport) -> QSystem:
    """Build ``Q`` and ``b`` of the frozen-information mean recursion.

    Row block ``(j, i)`` is the v2f message from ``j`` toward the factor on
    ``{i, j}``; it reads column blocks ``(k, j)`` for ``k in N(j)\\i`` through

        Q[(j,i),(k,j)] = C*_{j->f_ij} M_kj coef_k,
        M_kj = coef_j^T (R_kj + coef_k C*_{k->f_kj} coef_k^T)^{-1},

    where both coefficients are those of edge ``{k, j}``, and
    ``b[(j,i)] = C*_{j->f_ij} sum_k M_kj y_kj``.
    """
    dms = directed_messages(model)
    ordering = [dm.key for dm in dms]
    sizes = [model.agents[dm.agent].dim for dm in dms]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    pos = {k: n for n, k in enumerate(ordering)}
    n = int(offsets[-1])
    Q = np.zeros((n, n))
    b = np.zeros(n)

    # M_kj coef_k and M_kj y_kj for every f2v direction (edge {k,j} -> j)
    gain, drive = {}, {}
    for dm in dms:
        j, k = dm.agent, dm.other
        e = model.edges[dm.edge]
        Cj, Ck = e.coef_for(j), e.coef_for(k)
        S = numerics.symmetrize(e.noise_cov + Ck @ numerics.spd_solve(report.v2f_star[(k, j)], Ck.T))
        Z = numerics.spd_solve(S, np.column_stack([Ck, e.obs]))
        MZ = Cj.T @ Z
        gain[(j, k)] = MZ[:, :-1]
        drive[(j, k)] = MZ[:, -1]

    for dm in dms:
        j, i = dm.agent, dm.other
        r = pos[(j, i)]
        rows = slice(offsets[r], offsets[r + 1])
        lam = report.v2f_star[(j, i)]
        acc = np.zeros(model.agents[j].dim)
        for k in model.adjacency[j]:
            if k == i:
                continue
            c = pos[(k, j)]
            Q[rows, offsets[c]:offsets[c + 1]] = numerics.spd_solve(lam, gain[(j, k)])
            acc += drive[(j, k)]
        b[rows] = numerics.spd_solve(lam, acc)
    return QSystem(Q, b, ordering, offsets)


def mean_recursion(qsys: QSystem, v0: np.ndarray, iters: int) -> np.ndarray:
    """Rows are ``v^(0), ..., v^(iters)`` of ``v <- -Q v + b``."""
    v = np.asarray(v0, dtype=float)
    if v.shape != qsys.b.shape:
        raise ValueError(f"v0 has shape {v.shape}, expected {qsys.b.shape}")
    out = np.empty((iters + 1, v.size))
    out[0] = v
    for n in range(1, iters + 1):
        v = -qsys.Q @ v + qsys.b
        out[n] = v
    return out


def decide(model: PairwiseModel, tol: float = DEFAULT_FP_TOL, rho_tol: float = DEFAULT_RHO_TOL,
           max_iters: int = DEFAULT_FP_MAX_ITERS) -> ConvergenceVerdict:
    report = fixed_point(model, tol=tol, max_iters=max_iters)
    qsys = assemble_q(model, report)
    rho = numerics.spectral_radius(qsys.Q, rho_tol)
    converges = rho < 1.0
    fixed_mean = None
    if converges:
        fixed_mean = np.linalg.solve(np.eye(qsys.b.size) + qsys.Q, qsys.b) if qsys.b.size else qsys.b
    return ConvergenceVerdict(rho, converges, 1.0 - rho, fixed_mean, report, qsys)


def beliefs_at(model: PairwiseModel, report: FixedPointReport, qsys: QSystem,
               v: np.ndarray) -> list[np.ndarray]:
    """Belief means implied by stacked v2f means ``v`` with information frozen at ``C*``."""
    pos = {k: n for n, k in enumerate(qsys.ordering)}

    def v2f_mean(key: Key) -> np.ndarray:
        n = pos[key]
        return v[qsys.offsets[n]:qsys.offsets[n + 1]]

    means = []
    for i, agent in enumerate(model.agents):
        J = model.prior_info[i].copy()
        h = np.zeros(agent.dim)
        for j in model.adjacency[i]:
            e = model.edge(i, j)
            Ci, Cj = e.coef_for(i), e.coef_for(j)
            S = numerics.symmetrize(e.noise_cov + Cj @ numerics.spd_solve(report.v2f_star[(j, i)], Cj.T))
            h += Ci.T @ numerics.spd_solve(S, e.obs - Cj @ v2f_mean((j, i)))
            J += report.c_star[(i, j)]
        means.append(numerics.spd_solve(numerics.symmetrize(J), h))
    return means


# -- Property 1 checks -------------------------------------------------------------

@dataclass
class PropertyViolation:
    prop: str
    trial: int
    key: Key
    min_eig: float
    matrices: dict[str, Any]


@dataclass
class PropertyReport:
    trials: int
    slack: float
    checks: dict[str, int] = field(default_factory=lambda: {"monotone": 0, "scaling": 0, "bounded": 0})
    violations: list[PropertyViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    r = rng.integers(0, n + 1) if rank is None else rank
    B = rng.standard_normal((n, r)) * np.exp(rng.uniform(-2.0, 2.0))
    return B @ B.T


def _random_state(model: PairwiseModel, rng: np.random.Generator, pd: bool) -> InfoMatrixState:
    out = {}
    for dm in directed_messages(model):
        n = model.agents[dm.agent].dim
        if pd:
            out[dm.key] = _random_psd(rng, n, rank=n + 1) + 1e-3 * np.eye(n)
        else:
            out[dm.key] = _random_psd(rng, n)
    return out


def check_properties(model: PairwiseModel, trials: int, seed: int, slack: float = 1e-9) -> PropertyReport:
    """Randomized check of monotonicity, scaling and boundedness of ``G``.

    Each trial draws a PSD state ``C2`` and a PSD perturbation ``D`` and
    checks ``G(C2 + D) >= G(C2)``; draws a PD state ``C`` and ``alpha`` in
    ``(1, 10]`` and checks ``alpha G(C) > G(alpha C)`` and
    ``G(C / alpha) > G(C) / alpha``; and checks that every evaluated ``G``
    lies between the per-message bounds. A comparison fails when the smallest
    eigenvalue of the difference is below ``-slack``; the strict comparisons
    cannot be told apart from equality closer than that in floating point.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = PropertyReport(trials, slack)
    bnd = bounds(model)

    def check(prop: str, trial: int, key: Key, diff: np.ndarray, **mats: np.ndarray) -> None:
        report.checks[prop] += 1
        lo = numerics.min_eigen_sym(numerics.symmetrize(diff))
        if lo < -slack:
            report.violations.append(PropertyViolation(prop, trial, key, lo, mats))

    def check_bounds(trial: int, G: InfoMatrixState) -> None:
        for key, block in G.items():
            U, L = bnd[key]
            check("bounded", trial, key, U - block, G=block, U=U)
            check("bounded", trial, key, block - L, G=block, L=L)

    for trial in range(trials):
        C2 = _random_state(model, rng, pd=False)
        C1 = {k: v + _random_psd(rng, v.shape[0]) for k, v in C2.items()}
        G1, G2 = apply_g(model, C1), apply_g(model, C2)
        for key in G1:
            check("monotone", trial, key, G1[key] - G2[key], C1=C1[key], C2=C2[key])
        check_bounds(trial, G1)
        check_bounds(trial, G2)

        C = _random_state(model, rng, pd=True)
        alpha = float(rng.uniform(1.0, 10.0))
        if alpha == 1.0:
            alpha = 10.0
        GC = apply_g(model, C)
        G_up = apply_g(model, {k: alpha * v for k, v in C.items()})
        G_down = apply_g(model, {k: v / alpha for k, v in C.items()})
        for key in GC:
            check("scaling", trial, key, alpha * GC[key] - G_up[key], C=C[key], alpha=np.array(alpha))
            check("scaling", trial, key, G_down[key] - GC[key] / alpha, C=C[key], alpha=np.array(alpha))
        check_bounds(trial, GC)
    return report


def report_dict(verdict: ConvergenceVerdict, bounds_ok: bool) -> dict[str, Any]:
    return {
        "format_version": 1,
        "rho": verdict.rho,
        "converges": verdict.converges,
        "indeterminate": verdict.indeterminate,
        "margin": verdict.margin,
        "iterations": verdict.report.iterations,
        "residuals": list(verdict.report.residual_history),
        "bounds_ok": bounds_ok,
        "q_dim": int(verdict.qsys.Q.shape[0]),
    }


def fixed_point_within_bounds(model: PairwiseModel, report: FixedPointReport, slack: float = 1e-9) -> bool:
    for key, (U, L) in bounds(model).items():
        C = report.c_star[key]
        if numerics.min_eigen_sym(numerics.symmetrize(U - C)) < -slack:
            return False
        if numerics.min_eigen_sym(numerics.symmetrize(C - L)) < -slack:
            return False
    return True
