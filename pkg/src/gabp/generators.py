"""Seeded benchmark models.

Topologies: chain, cycle, grid, random (Erdos-Renyi, resampled until
connected), tree (uniform random labelled tree) and dcflow (explicit edge list
with per-line susceptances). Coefficient modes:

- ``unit``: identity-like blocks, ``coef = I_{m x N}`` with ``m = max(N_i, N_j)``.
- ``random``: standard-normal ``m x N`` blocks, redrawn until full column rank.
- ``difference``: DC-flow style line measurement, ``coef_i = +b I``,
  ``coef_j = -b I`` where ``b`` is the line susceptance (1 off the dcflow
  topology); both endpoints must have the same dimension.

Priors are ``prior_scale * I``. Noise covariances are ``noise_scale * I``
unless ``noise_anisotropy`` (the ratio of largest to smallest noise variance)
exceeds one; each edge then gets variances log-spaced from
``noise_scale / noise_anisotropy`` up to ``noise_scale`` in a random
orthonormal basis, i.e. a measurement that is sharp in some directions and
vague in others. Observations are synthesized from a ground truth
``x* ~ N(0, W)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import networkx as nx
import numpy as np

from gabp.model import Agent, EdgeObservation, PairwiseModel, ensure_valid
from gabp.model import RANK_RTOL

TOPOLOGIES = ("chain", "cycle", "grid", "random", "tree", "dcflow")
COEF_MODES = ("unit", "random", "difference")
MAX_CONNECT_RETRIES = 100
MAX_RANK_RETRIES = 100


class CannotConnect(RuntimeError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class GenSpec:
    topology: str
    n: int = 2
    rows: int | None = None
    cols: int | None = None
    edge_prob: float = 0.5
    edges: list[tuple[int, int]] | None = None
    susceptances: list[float] | None = None
    dims: int | list[int] = 1
    prior_scale: float = 1.0
    noise_scale: float = 1.0
    noise_anisotropy: float = 1.0
    coef_mode: str = "unit"
    seed: int = 0

    def check(self) -> None:
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.coef_mode not in COEF_MODES:
            raise ValueError(f"unknown coefficient mode {self.coef_mode!r}")
        if self.topology == "grid":
            if not self.rows or not self.cols or self.rows * self.cols < 2:
                raise ValueError("grid needs rows * cols >= 2")
        elif self.n < 2:
            raise ValueError("need at least 2 agents")
        if not self.prior_scale > 0:
            raise ValueError("prior_scale must be positive")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive (noise covariance must be PD)")
        if not self.noise_anisotropy >= 1:
            raise ValueError("noise_anisotropy must be >= 1")
        if self.topology == "random" and not 0 < self.edge_prob <= 1:
            raise ValueError("edge_prob must lie in (0, 1]")
        if self.susceptances is not None and self.edges is not None \
                and len(self.susceptances) != len(self.edges):
            raise ValueError("one susceptance per edge required")

    @property
    def num_agents(self) -> int:
        if self.topology == "grid":
            return self.rows * self.cols
        return self.n


def _graph_edges(spec: GenSpec, rng: np.random.Generator) -> list[tuple[int, int]]:
    n = spec.num_agents
    if spec.topology == "chain":
        return [(k, k + 1) for k in range(n - 1)]
    if spec.topology == "cycle":
        if n == 2:
            return [(0, 1)]
        return sorted({tuple(sorted((k, (k + 1) % n))) for k in range(n)})
    if spec.topology == "grid":
        G = nx.convert_node_labels_to_integers(nx.grid_2d_graph(spec.rows, spec.cols), ordering="sorted")
        return sorted(tuple(sorted(e)) for e in G.edges)
    if spec.topology == "tree":
        G = nx.random_labeled_tree(n, seed=int(rng.integers(2**31)))
        return sorted(tuple(sorted(e)) for e in G.edges)
    if spec.topology == "random":
        for _ in range(MAX_CONNECT_RETRIES):
            G = nx.gnp_random_graph(n, spec.edge_prob, seed=int(rng.integers(2**31)))
            if nx.is_connected(G):
                return sorted(tuple(sorted(e)) for e in G.edges)
        raise CannotConnect(f"no connected G({n}, {spec.edge_prob}) in {MAX_CONNECT_RETRIES} draws")
    # dcflow
    edges = spec.edges
    if edges is None:
        edges = [(k, (k + 1) % n) for k in range(n)] if n > 2 else [(0, 1)]
    out = sorted({tuple(sorted(map(int, e))) for e in edges})
    if len(out) != len(edges) or any(a == b or not 0 <= a < n or not 0 <= b < n for a, b in out):
        raise GenerationError("dcflow edge list has duplicates, self-loops or unknown buses")
    return out


def _dims(spec: GenSpec) -> list[int]:
    n = spec.num_agents
    if isinstance(spec.dims, int):
        return [spec.dims] * n
    dims = [int(d) for d in spec.dims]
    if len(dims) != n:
        raise ValueError(f"dims has {len(dims)} entries for {n} agents")
    return dims


def _random_full_rank(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    for _ in range(MAX_RANK_RETRIES):
        C = rng.standard_normal((m, n))
        s = np.linalg.svd(C, compute_uv=False)
        if s[-1] > RANK_RTOL * s[0]:
            return C
    raise GenerationError("could not draw a full-column-rank coefficient block")


def _noise_cov(spec: GenSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    if spec.noise_anisotropy == 1.0 or m == 1:
        return spec.noise_scale * np.eye(m)
    basis, _ = np.linalg.qr(rng.standard_normal((m, m)))
    variances = spec.noise_scale * np.logspace(-np.log10(spec.noise_anisotropy), 0.0, m)
    R = (basis * variances) @ basis.T
    return 0.5 * (R + R.T)


def embed_truth(spec: GenSpec) -> tuple[PairwiseModel, np.ndarray]:
    """Generate a model together with the ground truth used for its observations."""
    spec.check()
    rng = np.random.default_rng(spec.seed)
    edges = _graph_edges(spec, rng)
    dims = _dims(spec)
    if any(d < 1 for d in dims):
        raise ValueError("dims must be positive")
    susceptances: Sequence[float]
    if spec.topology == "dcflow" and spec.susceptances is not None:
        lookup = {tuple(sorted(map(int, e))): float(b) for e, b in zip(spec.edges or edges, spec.susceptances)}
        susceptances = [lookup[e] for e in edges]
    else:
        susceptances = [1.0] * len(edges)

    agents = tuple(Agent(k, d, spec.prior_scale * np.eye(d)) for k, d in enumerate(dims))
    x_true = [np.linalg.cholesky(a.prior_cov) @ rng.standard_normal(a.dim) for a in agents]

    observations = []
    for (i, j), b in zip(edges, susceptances):
        ni, nj = dims[i], dims[j]
        if spec.coef_mode == "difference":
            if ni != nj:
                raise GenerationError(f"difference coefficients need equal dims on edge ({i}, {j})")
            ci, cj = b * np.eye(ni), -b * np.eye(nj)
        elif spec.coef_mode == "unit":
            m = max(ni, nj)
            ci, cj = np.eye(m, ni), np.eye(m, nj)
        else:
            m = max(ni, nj)
            ci, cj = _random_full_rank(rng, m, ni), _random_full_rank(rng, m, nj)
        R = _noise_cov(spec, ci.shape[0], rng)
        y = ci @ x_true[i] + cj @ x_true[j] + np.linalg.cholesky(R) @ rng.standard_normal(R.shape[0])
        observations.append(EdgeObservation(i, j, y, ci, cj, R))

    meta = {"generator": _spec_record(spec)}
    model = ensure_valid(PairwiseModel(agents, tuple(observations), meta))
    return model, np.concatenate(x_true)


def generate(spec: GenSpec) -> PairwiseModel:
    return embed_truth(spec)[0]


def _spec_record(spec: GenSpec) -> dict:
    rec = asdict(spec)
    if rec["edges"] is not None:
        rec["edges"] = [list(map(int, e)) for e in rec["edges"]]
    return {k: v for k, v in rec.items() if v is not None}


def tree_diameter(model: PairwiseModel) -> int:
    G = nx.Graph([(e.i, e.j) for e in model.edges])
    return nx.diameter(G)
