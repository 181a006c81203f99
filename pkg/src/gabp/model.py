"""Pairwise linear Gaussian network model.

Each agent ``i`` owns an unknown ``x_i`` with prior ``N(0, W_i)``. Each edge
``{i, j}`` (stored once, with ``i < j``) carries one shared observation

    y_ij = coef_i @ x_i + coef_j @ x_j + z_ij,    z_ij ~ N(0, R_ij).

Naming note: in the usual double-index notation the coefficient of ``x_i`` on
edge ``{i, j}`` is written ``A_{j,i}`` and that of ``x_j`` is ``A_{i,j}``. Here
they are ``coef_i`` and ``coef_j``, i.e. named after the variable they multiply.
This is the only place that mapping is spelled out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, NamedTuple, Sequence

import numpy as np

from gabp import numerics

FORMAT_VERSION = 1
RANK_RTOL = 1e-10


class ModelError(ValueError):
    """A model file or model object could not be used."""


@dataclass(frozen=True, eq=False)
class Agent:
    id: int
    dim: int
    prior_cov: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Agent):
            return NotImplemented
        return (self.id == other.id and self.dim == other.dim
                and _same(self.prior_cov, other.prior_cov))


@dataclass(frozen=True, eq=False)
class EdgeObservation:
    i: int
    j: int
    obs: np.ndarray
    coef_i: np.ndarray
    coef_j: np.ndarray
    noise_cov: np.ndarray

    @property
    def obs_dim(self) -> int:
        return int(np.shape(self.obs)[0])

    def other(self, t: int) -> int:
        return self.j if t == self.i else self.i

    def coef_for(self, t: int) -> np.ndarray:
        """Coefficient matrix multiplying agent ``t``'s unknown."""
        if t == self.i:
            return self.coef_i
        if t == self.j:
            return self.coef_j
        raise KeyError(f"agent {t} is not an endpoint of edge ({self.i}, {self.j})")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EdgeObservation):
            return NotImplemented
        return (self.i == other.i and self.j == other.j
                and all(_same(a, b) for a, b in zip(
                    (self.obs, self.coef_i, self.coef_j, self.noise_cov),
                    (other.obs, other.coef_i, other.coef_j, other.noise_cov))))


class DirectedMessage(NamedTuple):
    """One direction of an edge, seen from ``agent``.

    For factor-to-variable messages ``agent`` is the target; for
    variable-to-factor messages it is the source. ``other`` is the remaining
    endpoint and ``edge`` indexes ``PairwiseModel.edges``.
    """

    agent: int
    other: int
    edge: int

    @property
    def key(self) -> tuple[int, int]:
        return (self.agent, self.other)


@dataclass(frozen=True, eq=False)
class PairwiseModel:
    agents: tuple[Agent, ...]
    edges: tuple[EdgeObservation, ...]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: (e.i, e.j))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PairwiseModel):
            return NotImplemented
        return (self.agents == other.agents and self.edges == other.edges
                and self.meta == other.meta)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def dims(self) -> list[int]:
        return [a.dim for a in self.agents]

    @cached_property
    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.agents]
        for e in self.edges:
            if 0 <= e.i < len(adj) and 0 <= e.j < len(adj) and e.i != e.j:
                adj[e.i].append(e.j)
                adj[e.j].append(e.i)
        return [sorted(a) for a in adj]

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        """Maps both ``(i, j)`` and ``(j, i)`` to the edge's position."""
        index = {}
        for n, e in enumerate(self.edges):
            index[(e.i, e.j)] = n
            index[(e.j, e.i)] = n
        return index

    def edge(self, a: int, b: int) -> EdgeObservation:
        return self.edges[self.edge_index[(a, b)]]

    @cached_property
    def prior_info(self) -> list[np.ndarray]:
        """``W_i^{-1}`` per agent."""
        return [numerics.spd_inverse(a.prior_cov) for a in self.agents]


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return np.shape(a) == np.shape(b) and np.array_equal(a, b)


def neighbors(model: PairwiseModel, i: int) -> list[int]:
    if not 0 <= i < model.num_agents:
        raise KeyError(f"unknown agent id {i}")
    return list(model.adjacency[i])


def directed_messages(model: PairwiseModel) -> list[DirectedMessage]:
    """All ``2 |E|`` directed messages in canonical order.

    The order is ascending by ``agent`` and then by ``other``. Every stacked
    quantity in the package (message information matrices, the mean-recursion
    matrix and its offset) uses this order.
    """
    out = []
    for t, nbrs in enumerate(model.adjacency):
        for s in nbrs:
            out.append(DirectedMessage(t, s, model.edge_index[(t, s)]))
    return out


# -- validation --------------------------------------------------------------

def _matrix_problems(name: str, M: Any, shape: tuple[int, ...]) -> list[str]:
    M = np.asarray(M, dtype=float)
    if M.shape != shape:
        return [f"{name} has shape {M.shape}, expected {shape}"]
    if not np.all(np.isfinite(M)):
        return [f"{name} has non-finite entries"]
    return []


def _spd_problems(name: str, S: np.ndarray) -> list[str]:
    scale = max(np.abs(S).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(S - S.T).max(initial=0.0) > numerics.SYM_RTOL * scale:
        return [f"{name} not symmetric"]
    try:
        numerics.cholesky(numerics.symmetrize(S))
    except (numerics.NotPositiveDefinite, ValueError):
        return [f"{name} not positive definite"]
    return []


def _full_column_rank(C: np.ndarray) -> bool:
    if C.shape[0] < C.shape[1]:
        return False
    s = np.linalg.svd(C, compute_uv=False)
    return s.size > 0 and s[-1] > RANK_RTOL * s[0]


def validate(model: PairwiseModel) -> list[str]:
    """Check every structural and numerical assumption of the model.

    Returns a list of human-readable violations; an empty list means the
    model is valid. Never raises on malformed but finite-shaped input.
    """
    problems: list[str] = []
    M = len(model.agents)
    if M == 0:
        return ["model has no agents"]
    ids = [a.id for a in model.agents]
    if ids != list(range(M)):
        problems.append(f"agent ids must be 0..{M - 1} in order, got {ids}")
    dims: dict[int, int] = {}
    for a in model.agents:
        tag = f"agent {a.id}"
        if not isinstance(a.dim, (int, np.integer)) or a.dim < 1:
            problems.append(f"{tag}: dim must be a positive integer")
            continue
        dims[a.id] = int(a.dim)
        found = _matrix_problems(f"{tag}: prior_cov", a.prior_cov, (a.dim, a.dim))
        problems += found or _spd_problems(f"{tag}: prior_cov", np.asarray(a.prior_cov, float))

    seen: set[tuple[int, int]] = set()
    for e in model.edges:
        tag = f"edge ({e.i}, {e.j})"
        if e.i not in dims or e.j not in dims:
            problems.append(f"{tag}: endpoint is not a valid agent")
            continue
        if not e.i < e.j:
            problems.append(f"{tag}: endpoints must satisfy i < j")
            continue
        if (e.i, e.j) in seen:
            problems.append(f"{tag}: duplicate observation for this pair")
            continue
        seen.add((e.i, e.j))
        obs = np.asarray(e.obs, dtype=float)
        if obs.ndim != 1 or obs.size == 0:
            problems.append(f"{tag}: obs must be a non-empty vector")
            continue
        m = obs.size
        if not np.all(np.isfinite(obs)):
            problems.append(f"{tag}: obs has non-finite entries")
        for name, C, n in (("coef_i", e.coef_i, dims[e.i]), ("coef_j", e.coef_j, dims[e.j])):
            found = _matrix_problems(f"{tag}: {name}", C, (m, n))
            if not found and not _full_column_rank(np.asarray(C, float)):
                found = [f"{tag}: {name} not full column rank"]
            problems += found
        found = _matrix_problems(f"{tag}: noise_cov", e.noise_cov, (m, m))
        problems += found or _spd_problems(f"{tag}: noise_cov", np.asarray(e.noise_cov, float))

    if not _connected(M, seen):
        problems.append("graph not connected")
    return problems


def _connected(M: int, edges: set[tuple[int, int]]) -> bool:
    adj: list[list[int]] = [[] for _ in range(M)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    reached = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in reached:
                reached.add(nb)
                stack.append(nb)
    return len(reached) == M


def ensure_valid(model: PairwiseModel) -> PairwiseModel:
    problems = validate(model)
    if problems:
        raise ModelError("invalid model: " + "; ".join(problems))
    return model


# -- JSON ----------------------------------------------------------------------

def to_dict(model: PairwiseModel) -> dict[str, Any]:
    out: dict[str, Any] = {"format_version": FORMAT_VERSION}
    if model.meta:
        out["meta"] = model.meta
    out["agents"] = [
        {"id": a.id, "dim": a.dim, "prior_cov": np.asarray(a.prior_cov).tolist()}
        for a in model.agents
    ]
    out["edges"] = [
        {
            "i": e.i,
            "j": e.j,
            "obs": np.asarray(e.obs).tolist(),
            "coef_i": np.asarray(e.coef_i).tolist(),
            "coef_j": np.asarray(e.coef_j).tolist(),
            "noise_cov": np.asarray(e.noise_cov).tolist(),
        }
        for e in model.edges
    ]
    return out


def _as_matrix(value: Any, what: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 2:
        raise ModelError(f"{what} must be an array of arrays")
    return arr


def from_dict(data: dict[str, Any]) -> PairwiseModel:
    try:
        agents = [
            Agent(int(a["id"]), int(a["dim"]), _as_matrix(a["prior_cov"], f"agent {a['id']} prior_cov"))
            for a in data["agents"]
        ]
        edges = []
        for e in data["edges"]:
            obs = np.array(e["obs"], dtype=float)
            if obs.ndim != 1:
                raise ModelError(f"edge ({e['i']}, {e['j']}) obs must be a flat array")
            edges.append(EdgeObservation(
                int(e["i"]), int(e["j"]), obs,
                _as_matrix(e["coef_i"], "coef_i"),
                _as_matrix(e["coef_j"], "coef_j"),
                _as_matrix(e["noise_cov"], "noise_cov"),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed model data: {exc!r}") from None
    return PairwiseModel(tuple(agents), tuple(edges), dict(data.get("meta", {})))


def dumps(model: PairwiseModel) -> str:
    # json writes floats with repr(), which round-trips IEEE doubles exactly
    return json.dumps(to_dict(model), indent=1) + "\n"


def loads(text: str) -> PairwiseModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ModelError("model JSON must be an object")
    return from_dict(data)


def load(path) -> PairwiseModel:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(model: PairwiseModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model))


def unit_model(edges: Sequence[tuple[int, int]], obs: float | Sequence[float] = 1.0,
               prior: float = 1.0, noise: float = 1.0) -> PairwiseModel:
    """Scalar model with unit coefficients on the given edge list."""
    n = 1 + max(max(e) for e in edges)
    ys = np.broadcast_to(np.asarray(obs, dtype=float), (len(edges),))
    agents = tuple(Agent(k, 1, np.array([[prior]])) for k in range(n))
    es = tuple(
        EdgeObservation(min(a, b), max(a, b), np.array([y]), np.array([[1.0]]),
                        np.array([[1.0]]), np.array([[noise]]))
        for (a, b), y in zip(edges, ys)
    )
    return PairwiseModel(agents, es)
