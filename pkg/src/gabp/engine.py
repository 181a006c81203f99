"""Synchronous Gaussian belief propagation on a pairwise model.

Messages live in information form. A factor-to-variable message for edge
``{i, j}`` and target ``t`` is a pair ``(Lambda, eta)`` with
``Lambda = C_{f->t}^{-1}`` and ``eta = Lambda @ v_{f->t}``; round-0 matrices
may be singular, which is why nothing here ever inverts an f2v matrix. A
variable-to-factor message keeps its (always positive definite) information
matrix together with its mean.

Message keys are ``(agent, other)`` tuples: ``(target, other)`` for f2v and
``(source, other)`` for v2f, both in the canonical order of
:func:`gabp.model.directed_messages`.

Beliefs include the prior factor: ``P_i^{-1} = W_i^{-1} + sum_j Lambda_{f_ij->i}``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from gabp import numerics
from gabp.model import PairwiseModel, directed_messages

Key = tuple[int, int]

CONVERGED = "Converged"
MAX_ITERS = "MaxItersReached"
DIVERGED = "Diverged"

DIVERGENCE_THRESHOLD = 1e12
DEFAULT_ETA = 1e-9


class InitNotPSD(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FactorToVariableMsg:
    info_matrix: np.ndarray
    info_vector: np.ndarray


@dataclass(frozen=True, eq=False)
class VariableToFactorMsg:
    info_matrix: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True, eq=False)
class MessageState:
    f2v: dict[Key, FactorToVariableMsg]
    v2f: dict[Key, VariableToFactorMsg] | None
    round: int = 0


@dataclass(frozen=True, eq=False)
class BeliefSet:
    means: list[np.ndarray]
    covs: list[np.ndarray]

    def stacked_mean(self) -> np.ndarray:
        return np.concatenate(self.means)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    max_mean_delta: float
    max_info_delta: float
    messages: int
    scalars: int


@dataclass
class RunTrace:
    records: list[RoundRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "max_mean_delta", "max_info_delta", "messages", "scalars"])
            for r in self.records:
                w.writerow([r.round, f"{r.max_mean_delta:.17g}", f"{r.max_info_delta:.17g}",
                            r.messages, r.scalars])


@dataclass
class RunConfig:
    max_iters: int | None = None  # None -> 10 * number of agents
    eta: float = DEFAULT_ETA
    init: str | Mapping[Key, np.ndarray] = "zero"
    initial_means: Mapping[Key, np.ndarray] | None = None
    divergence_threshold: float = DIVERGENCE_THRESHOLD


@dataclass
class RunResult:
    beliefs: BeliefSet
    trace: RunTrace
    status: str
    state: MessageState

    @property
    def rounds(self) -> int:
        return self.state.round


# -- initialization --------------------------------------------------------------

def upper_block(model: PairwiseModel, target: int, other: int) -> np.ndarray:
    """``coef_t^T R^{-1} coef_t``: the largest information an edge can send to ``t``."""
    e = model.edge(target, other)
    C = e.coef_for(target)
    return numerics.symmetrize(C.T @ numerics.spd_solve(e.noise_cov, C))


def random_means(model: PairwiseModel, rng: np.random.Generator, scale: float = 1.0) -> dict[Key, np.ndarray]:
    """Standard-normal initial f2v mean vectors, one per directed message."""
    return {dm.key: scale * rng.standard_normal(model.agents[dm.agent].dim)
            for dm in directed_messages(model)}


def init_messages(model: PairwiseModel, policy: str | Mapping[Key, np.ndarray] = "zero",
                  initial_means: Mapping[Key, np.ndarray] | None = None) -> MessageState:
    """Round-0 factor-to-variable messages.

    ``policy`` is ``"zero"`` (all information matrices 0), ``"upper"`` (each
    set to its per-message upper bound) or a mapping of per-message PSD
    matrices. ``initial_means`` optionally sets the initial message means
    ``v^(0)``; the information vector is then ``Lambda^(0) @ v^(0)``.
    """
    f2v = {}
    for dm in directed_messages(model):
        n = model.agents[dm.agent].dim
        if isinstance(policy, str):
            if policy == "zero":
                lam = np.zeros((n, n))
            elif policy == "upper":
                lam = upper_block(model, dm.agent, dm.other)
            else:
                raise ValueError(f"unknown init policy {policy!r}")
        else:
            lam = np.array(policy[dm.key], dtype=float)
            if lam.shape != (n, n):
                raise InitNotPSD(f"initial matrix for {dm.key} has shape {lam.shape}, expected {(n, n)}")
            try:
                ok = numerics.is_psd(lam)
            except ValueError:
                ok = False
            if not ok:
                raise InitNotPSD(f"initial matrix for message {dm.key} is not PSD")
        v0 = np.zeros(n) if initial_means is None else np.asarray(initial_means[dm.key], dtype=float)
        f2v[dm.key] = FactorToVariableMsg(lam, lam @ v0)
    return MessageState(f2v, None, 0)


# -- message updates -------------------------------------------------------------

def variable_to_factor(model: PairwiseModel, state: MessageState, edge: tuple[int, int],
                       source: int) -> VariableToFactorMsg:
    """Message from ``source`` to the factor on ``edge``, from last round's f2v messages."""
    a, b = edge
    skip = b if source == a else a
    lam = model.prior_info[source].copy()
    vec = np.zeros(model.agents[source].dim)
    for k in model.adjacency[source]:
        if k == skip:
            continue
        msg = state.f2v[(source, k)]
        lam += msg.info_matrix
        vec += msg.info_vector
    lam = numerics.symmetrize(lam)
    return VariableToFactorMsg(lam, numerics.spd_solve(lam, vec))


def factor_to_variable(model: PairwiseModel, v2f: Mapping[Key, VariableToFactorMsg],
                       edge: tuple[int, int], target: int) -> FactorToVariableMsg:
    """Message from the factor on ``edge`` to ``target``, given the other endpoint's v2f message.

    With ``S = R + coef_s C_{s->f} coef_s^T`` for source ``s``:
    ``Lambda = coef_t^T S^{-1} coef_t`` and
    ``eta = coef_t^T S^{-1} (y - coef_s v_{s->f})``.
    """
    a, b = edge
    source = b if target == a else a
    e = model.edge(target, source)
    inc = v2f[(source, target)]
    Ct, Cs = e.coef_for(target), e.coef_for(source)
    S = numerics.symmetrize(e.noise_cov + Cs @ numerics.spd_solve(inc.info_matrix, Cs.T))
    rhs = np.column_stack([Ct, e.obs - Cs @ inc.mean])
    Z = numerics.spd_solve(S, rhs)
    G = Ct.T @ Z
    return FactorToVariableMsg(numerics.symmetrize(G[:, :-1]), G[:, -1].copy())


def sync_round(model: PairwiseModel, state: MessageState,
               order: Sequence[Key] | None = None) -> MessageState:
    """One flooding round: every v2f from the old f2v, then every f2v from the new v2f.

    ``order`` permutes the per-message evaluation order; the result does not
    depend on it since each update reads only the previous half-round.
    """
    keys = [dm.key for dm in directed_messages(model)] if order is None else list(order)
    v2f = {}
    for src, other in keys:
        v2f[(src, other)] = variable_to_factor(model, state, (src, other), src)
    f2v = {}
    for tgt, other in keys:
        f2v[(tgt, other)] = factor_to_variable(model, v2f, (tgt, other), tgt)
    canonical = [dm.key for dm in directed_messages(model)]
    return MessageState({k: f2v[k] for k in canonical}, {k: v2f[k] for k in canonical},
                        state.round + 1)


def beliefs(model: PairwiseModel, state: MessageState) -> BeliefSet:
    means, covs = [], []
    for i, agent in enumerate(model.agents):
        J = model.prior_info[i].copy()
        h = np.zeros(agent.dim)
        for j in model.adjacency[i]:
            msg = state.f2v[(i, j)]
            J += msg.info_matrix
            h += msg.info_vector
        J = numerics.symmetrize(J)
        means.append(numerics.spd_solve(J, h))
        covs.append(numerics.spd_inverse(J))
    return BeliefSet(means, covs)


def round_stats(model: PairwiseModel) -> tuple[int, int]:
    """Messages and transmitted scalars per synchronous round.

    Each edge carries two v2f and two f2v messages per round; a message to or
    from agent ``t`` is an ``N_t x N_t`` matrix plus a length-``N_t`` vector.
    """
    messages = 4 * len(model.edges)
    scalars = 0
    for e in model.edges:
        for t in (e.i, e.j):
            n = model.agents[t].dim
            scalars += 2 * (n * n + n)
    return messages, scalars


def stacked_v2f_means(model: PairwiseModel, state: MessageState) -> np.ndarray:
    """All v2f means concatenated in canonical order."""
    if state.v2f is None:
        raise ValueError("no variable-to-factor messages before round 1")
    return np.concatenate([state.v2f[dm.key].mean for dm in directed_messages(model)])


def run(model: PairwiseModel, config: RunConfig | None = None,
        callback=None) -> RunResult:
    """Iterate synchronous rounds until the belief means settle.

    Stops with ``Converged`` once ``max_i ||mu_i^(l) - mu_i^(l-1)||_inf < eta``,
    with ``Diverged`` once any belief mean exceeds the divergence threshold in
    norm (or stops being finite), else with ``MaxItersReached``.
    """
    config = config or RunConfig()
    if config.eta <= 0:
        raise ValueError("eta must be positive")
    max_iters = 10 * model.num_agents if config.max_iters is None else config.max_iters
    state = init_messages(model, config.init, config.initial_means)
    current = beliefs(model, state)
    trace = RunTrace()
    messages, scalars = round_stats(model)
    status = MAX_ITERS
    while state.round < max_iters:
        new_state = sync_round(model, state)
        new = beliefs(model, new_state)
        mean_delta = max((float(np.max(np.abs(a - b), initial=0.0))
                          for a, b in zip(new.means, current.means)), default=0.0)
        info_delta = max((numerics.frob_norm(new_state.f2v[k].info_matrix - state.f2v[k].info_matrix)
                          for k in new_state.f2v), default=0.0)
        trace.records.append(RoundRecord(new_state.round, mean_delta, info_delta, messages, scalars))
        state, current = new_state, new
        if callback is not None:
            callback(state, current)
        if _diverged(current.means, config.divergence_threshold):
            status = DIVERGED
            break
        if mean_delta < config.eta:
            status = CONVERGED
            break
    return RunResult(current, trace, status, state)


def _diverged(means: Iterable[np.ndarray], threshold: float) -> bool:
    for mu in means:
        norm = float(np.linalg.norm(mu))
        if not np.isfinite(norm) or norm > threshold:
            return True
    return False
