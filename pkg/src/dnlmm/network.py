"""Network topologies and combination matrices.

A :class:`Topology` stores a symmetric boolean adjacency with a true
diagonal, so ``adjacency[m, k]`` reads "m is in the neighbourhood of k"
(a node always neighbours itself).  A :class:`CombinationMatrix` holds the
column-stochastic weights ``C`` where ``C[m, k]`` is the weight node ``k``
gives to the estimate arriving from node ``m``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

COLUMN_SUM_TOL = 1e-12
MAX_GEOMETRIC_DRAWS = 100


class TopologyError(ValueError):
    """Raised for malformed or unusable network descriptions."""


@dataclass(frozen=True)
class Topology:
    adjacency: np.ndarray
    positions: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise TopologyError(f"adjacency must be square, got shape {adj.shape}")
        if not np.array_equal(adj, adj.T):
            i, j = np.argwhere(adj != adj.T)[0]
            raise TopologyError(f"adjacency is not symmetric at ({i}, {j})")
        adj = adj.copy()
        np.fill_diagonal(adj, True)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        """Neighbourhood sizes ``n_k``, counting the node itself."""
        return self.adjacency.sum(axis=0)

    def neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, k])

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(i, j)`` with ``i < j``; self-loops omitted."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def is_connected(self) -> bool:
        n_comp, _ = connected_components(self.adjacency, directed=False)
        return n_comp == 1

    def to_json(self) -> str:
        return json.dumps({"n": self.node_count, "edges": [list(e) for e in self.edges()]})

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        data = json.loads(text)
        return from_edges(data["n"], data["edges"])


@dataclass(frozen=True)
class CombinationMatrix:
    weights: np.ndarray

    def __post_init__(self):
        c = np.array(self.weights, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise TopologyError(f"combination matrix must be square, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "weights", c)

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]

    def to_csv(self, path) -> None:
        np.savetxt(path, self.weights, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "CombinationMatrix":
        return cls(np.atleast_2d(np.loadtxt(path, delimiter=",")))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    message: str = ""
    index: tuple[int, ...] | None = None

    def __bool__(self) -> bool:
        return self.ok


def from_edges(n: int, edges) -> Topology:
    adj = np.eye(n, dtype=bool)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise TopologyError(f"edge ({i}, {j}) out of range for {n} nodes")
        adj[i, j] = adj[j, i] = True
    return Topology(adj)


def ring(n: int) -> Topology:
    return from_edges(n, [(k, (k + 1) % n) for k in range(n)])


def random_geometric(n: int, seed=None, radius: float = 0.3,
                     require_connected: bool = True) -> Topology:
    """Nodes uniform on the unit square, linked when closer than ``radius``.

    Each failed connectivity check redraws the positions and grows the
    radius by 5%; gives up after ``MAX_GEOMETRIC_DRAWS`` draws.
    """
    rng = np.random.default_rng(seed)
    r = radius
    for _ in range(MAX_GEOMETRIC_DRAWS):
        pos = rng.uniform(size=(n, 2))
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        topo = Topology(dist < r, positions=pos)
        if not require_connected or topo.is_connected():
            return topo
        r *= 1.05
    raise TopologyError(
        f"no connected random-geometric graph with {n} nodes after "
        f"{MAX_GEOMETRIC_DRAWS} draws (final radius {r:.3f})")


def build_topology(kind: str, node_count: int | None = None, seed=None,
                   radius: float = 0.3, adjacency=None, edges=None,
                   require_connected: bool = True) -> Topology:
    """Build a topology from a descriptor.

    Parameters
    ----------
    kind : {"ring", "random-geometric", "explicit"}
    node_count : int
        Required for ``ring`` and ``random-geometric``; for ``explicit``
        it is inferred from ``adjacency`` or must accompany ``edges``.
    seed : int or Generator, optional
        Only used by ``random-geometric``.
    adjacency : array_like, optional
        Explicit 0/1 matrix.  Must be symmetric.
    edges : sequence of pairs, optional
        Alternative explicit description (0-based).
    """
    if kind == "explicit":
        if adjacency is not None:
            topo = Topology(np.asarray(adjacency, dtype=bool))
        elif edges is not None and node_count is not None:
            topo = from_edges(node_count, edges)
        else:
            raise TopologyError("explicit topology needs an adjacency matrix or n + edges")
    else:
        if node_count is None or node_count < 2:
            raise ValueError(f"node_count must be >= 2, got {node_count}")
        if kind == "ring":
            topo = ring(node_count)
        elif kind in ("random-geometric", "random_geometric", "geometric"):
            topo = random_geometric(node_count, seed=seed, radius=radius,
                                    require_connected=require_connected)
        else:
            raise TopologyError(f"unknown topology kind {kind!r}")
    if topo.node_count < 2:
        raise ValueError(f"node_count must be >= 2, got {topo.node_count}")
    if require_connected and not topo.is_connected():
        raise TopologyError("topology is not connected")
    return topo


def metropolis_weights(topology: Topology) -> CombinationMatrix:
    """Metropolis rule: ``1/max(n_m, n_k)`` off the diagonal, remainder on it."""
    adj = topology.adjacency
    n = topology.degrees.astype(float)
    c = np.where(adj, 1.0 / np.maximum(n[:, None], n[None, :]), 0.0)
    np.fill_diagonal(c, 0.0)
    np.fill_diagonal(c, 1.0 - c.sum(axis=0))
    return CombinationMatrix(c)


def uniform_weights(topology: Topology) -> CombinationMatrix:
    """Averaging rule ``c_{m,k} = 1/n_k`` (left-stochastic only)."""
    adj = topology.adjacency.astype(float)
    return CombinationMatrix(adj / adj.sum(axis=0, keepdims=True))


def identity_weights(node_count: int) -> CombinationMatrix:
    return CombinationMatrix(np.eye(node_count))


def validate_combination(C, topology: Topology | None = None,
                         tol: float = COLUMN_SUM_TOL) -> ValidationReport:
    """Check nonnegativity, support and unit column sums of ``C``.

    Reports the first violation found.  The support check needs the
    topology and is skipped without it.
    """
    c = np.asarray(getattr(C, "weights", C), dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        return ValidationReport(False, f"matrix is not square: {c.shape}")
    if not np.all(np.isfinite(c)):
        m, k = np.argwhere(~np.isfinite(c))[0]
        return ValidationReport(False, f"non-finite entry at ({m}, {k})", (int(m), int(k)))
    bad = np.argwhere((c < 0) | (c > 1))
    if bad.size:
        m, k = bad[0]
        return ValidationReport(False, f"entry ({m}, {k}) = {c[m, k]} outside [0, 1]",
                                (int(m), int(k)))
    if topology is not None:
        if topology.node_count != c.shape[0]:
            return ValidationReport(False, "size mismatch with topology")
        bad = np.argwhere((c != 0) & ~topology.adjacency)
        if bad.size:
            m, k = bad[0]
            return ValidationReport(
                False, f"c[{m}, {k}] = {c[m, k]} but node {m} is not a neighbour of {k}",
                (int(m), int(k)))
    sums = c.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        k = int(bad[0])
        return ValidationReport(False, f"column {k} sums to {sums[k]!r}", (k,))
    return ValidationReport(True)


def save_topology(topology: Topology, path) -> None:
    Path(path).write_text(topology.to_json())


def load_topology(path) -> Topology:
    return Topology.from_json(Path(path).read_text())
