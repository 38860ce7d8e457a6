"""Communication graphs, doubly-stochastic weight matrices and connectivity.

Graphs are stored as receive-adjacency: ``graph.recv[i]`` is the set of
nodes whose values node i receives each round.  Undirected kinds (ring,
dense, complete) have symmetric adjacency; directed-ring and exponential
are directed but keep equal in- and out-degrees, which is what makes the
uniform weighting doubly stochastic.

The connectivity constant is ``rho_w = ||W - J||_2^2`` (squared spectral
norm, J = ones/n).  Note that experiment write-ups conventionally quote
the unsquared norm; ``WeightMatrix.spectral_norm`` carries that value.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    ConfigError,
    GraphConnectivityError,
    InvalidGraphError,
    PowerIterationError,
)

__all__ = [
    "GraphKind",
    "GraphSpec",
    "Graph",
    "WeightMatrix",
    "StochasticityReport",
    "build_graph",
    "metropolis_weights",
    "uniform_out_weights",
    "weights_for",
    "spectral_rho",
    "svd_rho",
    "validate_doubly_stochastic",
    "is_connected",
]


class GraphKind(str, Enum):
    RING = "ring"
    DIRECTED_RING = "directed-ring"
    EXPONENTIAL = "exponential"
    DENSE = "dense"
    COMPLETE = "complete"
    CUSTOM = "custom"


@dataclass(frozen=True)
class GraphSpec:
    """Declarative description of a communication graph.

    ``edges`` is only used for CUSTOM and lists ordered pairs (i, j)
    meaning node i receives from node j.
    """

    n: int
    kind: GraphKind
    edges: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"node count must be >= 1, got {self.n}")
        if self.kind is GraphKind.CUSTOM:
            if self.edges is None:
                raise ConfigError("custom graph requires an edge list")
            for i, j in self.edges:
                if not (0 <= i < self.n and 0 <= j < self.n):
                    raise ConfigError(f"edge ({i},{j}) out of range for n={self.n}")
        elif self.edges is not None:
            raise ConfigError(f"edge list only valid for custom graphs, not {self.kind.value}")


@dataclass(frozen=True)
class Graph:
    """Receive-adjacency: recv[i] lists the in-neighbors of node i (no self-loops)."""

    n: int
    recv: tuple[tuple[int, ...], ...]

    def in_degree(self, i: int) -> int:
        return len(self.recv[i])

    def out_degree(self, j: int) -> int:
        return sum(1 for i in range(self.n) if j in self.recv[i])

    def is_symmetric(self) -> bool:
        sets = [set(r) for r in self.recv]
        return all(i in sets[j] for i in range(self.n) for j in sets[i])


@dataclass(frozen=True)
class WeightMatrix:
    """Doubly-stochastic mixing matrix with its cached connectivity constant."""

    W: np.ndarray
    rho_w: float

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def spectral_norm(self) -> float:
        """Unsquared ||W - J||_2, the figure conventionally reported for graphs."""
        return float(np.sqrt(self.rho_w))


def _exponential_offsets(n: int) -> list[int]:
    offsets, o = [], 1
    while o <= n - 1:
        offsets.append(o)
        o *= 2
    return offsets


def _dense_offsets(n: int) -> list[int]:
    # Powers of two up to n/2, padded with the smallest missing offsets
    # until every node has at least n//2 neighbors.  An offset o < n/2
    # contributes two neighbors (+o and -o); o == n/2 contributes one.
    target = n // 2
    offsets = [o for o in _exponential_offsets(n) if o <= n // 2]

    def degree(offs: list[int]) -> int:
        return sum(1 if 2 * o == n else 2 for o in offs)

    cand = 2
    while degree(offsets) < target and cand <= n // 2:
        cand += 1
        if cand <= n // 2 and cand not in offsets:
            offsets.append(cand)
    return sorted(offsets)


def build_graph(spec: GraphSpec) -> Graph:
    """Materialize adjacency lists for a graph specification.

    Self-loops are excluded; they enter through the weight construction.
    """
    n = spec.n
    recv: list[set[int]] = [set() for _ in range(n)]

    if spec.kind is GraphKind.RING:
        for i in range(n):
            recv[i].update({(i - 1) % n, (i + 1) % n})
    elif spec.kind is GraphKind.DIRECTED_RING:
        for i in range(n):
            recv[i].add((i + 1) % n)
    elif spec.kind is GraphKind.EXPONENTIAL:
        for i in range(n):
            for o in _exponential_offsets(n):
                recv[i].add((i - o) % n)
    elif spec.kind is GraphKind.DENSE:
        for i in range(n):
            for o in _dense_offsets(n):
                recv[i].update({(i - o) % n, (i + o) % n})
    elif spec.kind is GraphKind.COMPLETE:
        for i in range(n):
            recv[i].update(j for j in range(n) if j != i)
    elif spec.kind is GraphKind.CUSTOM:
        assert spec.edges is not None
        for i, j in spec.edges:
            if i != j:
                recv[i].add(j)
    else:  # pragma: no cover
        raise ConfigError(f"unknown graph kind {spec.kind!r}")

    for i in range(n):
        recv[i].discard(i)
    return Graph(n=n, recv=tuple(tuple(sorted(r)) for r in recv))


def is_connected(graph: Graph) -> bool:
    """Breadth-first traversal on the union graph (edges of W and W^T)."""
    n = graph.n
    if n == 1:
        return True
    union: list[set[int]] = [set(r) for r in graph.recv]
    for i in range(n):
        for j in graph.recv[i]:
            union[j].add(i)
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in union[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == n


def metropolis_weights(graph: Graph) -> WeightMatrix:
    """Symmetric doubly-stochastic weights: W_ij = 1/(1 + max(deg_i, deg_j)).

    Requires an undirected, connected graph.
    """
    n = graph.n
    sets = [set(r) for r in graph.recv]
    for i in range(n):
        for j in sets[i]:
            if i not in sets[j]:
                raise InvalidGraphError(
                    f"metropolis weights need an undirected graph; edge {i}<-{j} has no reverse"
                )
    if not is_connected(graph):
        raise GraphConnectivityError("graph is not connected")

    deg = [len(s) for s in sets]
    W = np.zeros((n, n))
    for i in range(n):
        for j in sets[i]:
            W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, i] = 1.0 - W[i].sum()
    return WeightMatrix(W=W, rho_w=spectral_rho(W))


def uniform_out_weights(graph: Graph) -> WeightMatrix:
    """Uniform weights 1/(d+1) on in-neighbors and self.

    Doubly stochastic provided every node has in-degree == out-degree == d.
    """
    n = graph.n
    in_deg = [graph.in_degree(i) for i in range(n)]
    out_deg = [0] * n
    for i in range(n):
        for j in graph.recv[i]:
            out_deg[j] += 1
    degrees = set(in_deg) | set(out_deg)
    if len(degrees) != 1:
        raise InvalidGraphError(
            f"uniform weighting needs equal in/out degrees, got in={in_deg} out={out_deg}"
        )
    if not is_connected(graph):
        raise GraphConnectivityError("graph is not connected")

    d = in_deg[0]
    W = np.zeros((n, n))
    for i in range(n):
        W[i, i] = 1.0 / (d + 1)
        for j in graph.recv[i]:
            W[i, j] = 1.0 / (d + 1)
    return WeightMatrix(W=W, rho_w=spectral_rho(W))


def weights_for(spec: GraphSpec) -> WeightMatrix:
    """Default weight scheme per kind: Metropolis for undirected graphs,
    uniform for the directed constructions."""
    graph = build_graph(spec)
    if spec.kind in (GraphKind.DIRECTED_RING, GraphKind.EXPONENTIAL):
        return uniform_out_weights(graph)
    if spec.kind is GraphKind.CUSTOM:
        return metropolis_weights(graph) if graph.is_symmetric() else uniform_out_weights(graph)
    return metropolis_weights(graph)


def svd_rho(W: np.ndarray) -> float:
    """Dense-SVD evaluation of ||W - J||_2^2; the oracle route."""
    n = W.shape[0]
    J = np.full((n, n), 1.0 / n)
    s = np.linalg.svd(W - J, compute_uv=False)
    return float(s[0] ** 2)


def spectral_rho(
    W: np.ndarray,
    rtol: float = 1e-10,
    max_iter: int = 100_000,
) -> float:
    """Squared spectral norm of W - J by power iteration on (W-J)^T (W-J).

    Falls back to a dense SVD for n <= 64 if the iteration stalls; larger
    matrices raise PowerIterationError carrying the last estimate.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigError(f"weight matrix must be square, got shape {W.shape}")
    n = W.shape[0]
    if n == 1:
        return 0.0

    A = W - np.full((n, n), 1.0 / n)
    if np.abs(A).max() < 1e-15:
        return 0.0

    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam_prev = -1.0
    lam = 0.0
    for _ in range(max_iter):
        z = A.T @ (A @ v)
        norm_z = np.linalg.norm(z)
        if norm_z == 0.0:
            # v landed in the null space; restart once from a fresh direction
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        lam = float(v @ z)
        v = z / norm_z
        if abs(lam - lam_prev) <= rtol * max(abs(lam), 1e-300):
            return max(lam, 0.0)
        lam_prev = lam
    if n <= 64:
        return svd_rho(W)
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations", last_estimate=lam
    )


@dataclass(frozen=True)
class StochasticityReport:
    """Row/column sum deviations and negativity violations of a candidate W."""

    row_dev: np.ndarray
    col_dev: np.ndarray
    min_entry: float
    tol: float

    @property
    def max_row_dev(self) -> float:
        return float(np.abs(self.row_dev).max())

    @property
    def max_col_dev(self) -> float:
        return float(np.abs(self.col_dev).max())

    @property
    def passed(self) -> bool:
        return (
            self.max_row_dev <= self.tol
            and self.max_col_dev <= self.tol
            and self.min_entry >= -self.tol
        )

    def to_dict(self) -> dict:
        return {
            "max_row_dev": self.max_row_dev,
            "max_col_dev": self.max_col_dev,
            "min_entry": self.min_entry,
            "tol": self.tol,
            "passed": self.passed,
        }


def validate_doubly_stochastic(W: np.ndarray, tol: float = 1e-12) -> StochasticityReport:
    W = np.asarray(W, dtype=float)
    return StochasticityReport(
        row_dev=W.sum(axis=1) - 1.0,
        col_dev=W.sum(axis=0) - 1.0,
        min_entry=float(W.min()),
        tol=tol,
    )
