"""Hypergraph data structures: incidence, degrees, neighborhoods, contexts.

A hypergraph here is a fixed node count plus a list of hyperedges, each a set
of node ids, with one positive weight per hyperedge. Everything is immutable
after construction and cheap at the scale this package targets (a few
thousand nodes), so matrices are dense.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, IsolatedNodeError
from .tensor import Tensor


@dataclass(frozen=True)
class Hypergraph:
    """Node count, hyperedges as sorted id tuples, per-edge positive weights.

    Duplicate hyperedges are allowed (two identical co-author sets are two
    edges) and contribute independently to degrees. Isolated nodes are legal
    at this level; operations that need invertible degrees reject them.
    """

    num_nodes: int
    hyperedges: tuple[tuple[int, ...], ...]
    edge_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.num_nodes < 1:
            raise DataError(f"hypergraph needs at least one node, got {self.num_nodes}")
        edges = []
        for j, e in enumerate(self.hyperedges):
            members = list(e)
            if not members:
                raise DataError(f"hyperedge {j} is empty")
            if len(set(members)) != len(members):
                raise DataError(f"hyperedge {j} contains duplicate node ids: {sorted(members)}")
            for v in members:
                if not 0 <= v < self.num_nodes:
                    raise DataError(f"hyperedge {j} references invalid node id {v}")
            edges.append(tuple(sorted(members)))
        object.__setattr__(self, "hyperedges", tuple(edges))
        weights = self.edge_weights or tuple(1.0 for _ in edges)
        if len(weights) != len(edges):
            raise DataError(
                f"{len(weights)} edge weights for {len(edges)} hyperedges"
            )
        if any(w <= 0 for w in weights):
            raise DataError("all hyperedge weights must be positive")
        object.__setattr__(self, "edge_weights", tuple(float(w) for w in weights))

    @property
    def num_edges(self) -> int:
        return len(self.hyperedges)

    def node_degree(self, i: int) -> float:
        self._check_node(i)
        return sum(w for e, w in zip(self.hyperedges, self.edge_weights) if i in e)

    def isolated_nodes(self) -> list[int]:
        covered = set()
        for e in self.hyperedges:
            covered.update(e)
        return [v for v in range(self.num_nodes) if v not in covered]

    def _check_node(self, i: int) -> None:
        if not 0 <= i < self.num_nodes:
            raise IndexError(f"node id {i} out of range for {self.num_nodes} nodes")


@dataclass(frozen=True)
class DegreeMatrices:
    """Diagonals of the node and hyperedge degree matrices."""

    node_degrees: np.ndarray  # per node, sum of incident edge weights
    edge_degrees: np.ndarray  # per hyperedge, its cardinality


@dataclass(frozen=True)
class ContextHypergraph:
    """The subhypergraph of exactly the hyperedges containing ``center``.

    ``node_map[k]`` is the global id of sub node ``k``; sub ids are dense and
    assigned in ascending global-id order. ``center_sub`` locates the center.
    """

    center: int
    sub: Hypergraph
    node_map: tuple[int, ...]
    center_sub: int = field(default=0)

    def to_global(self, sub_id: int) -> int:
        return self.node_map[sub_id]


def incidence_matrix(g: Hypergraph) -> Tensor:
    """|V| x |E| binary incidence: H[v][e] = 1 iff v belongs to e."""
    h = np.zeros((g.num_nodes, g.num_edges))
    for j, e in enumerate(g.hyperedges):
        for v in e:
            h[v, j] = 1.0
    return Tensor(h)


def degree_matrices(g: Hypergraph) -> DegreeMatrices:
    """Weighted node degrees and hyperedge cardinalities.

    Rejects hypergraphs with isolated nodes: the inverse node-degree matrix
    used by the convolution would be singular.
    """
    node_deg = np.zeros(g.num_nodes)
    for e, w in zip(g.hyperedges, g.edge_weights):
        for v in e:
            node_deg[v] += w
    zero = np.flatnonzero(node_deg == 0.0)
    if zero.size:
        raise IsolatedNodeError(zero.tolist())
    edge_deg = np.array([float(len(e)) for e in g.hyperedges])
    return DegreeMatrices(node_degrees=node_deg, edge_degrees=edge_deg)


def hyperedge_neighbors(g: Hypergraph, i: int) -> set[int]:
    """All co-members of i's hyperedges, excluding i itself."""
    g._check_node(i)
    out: set[int] = set()
    for e in g.hyperedges:
        if i in e:
            out.update(e)
    out.discard(i)
    return out


def context_hypergraph(g: Hypergraph, i: int) -> ContextHypergraph:
    """Node-centered context: only the hyperedges containing i, densely renumbered."""
    g._check_node(i)
    edges = [e for e in g.hyperedges if i in e]
    weights = [w for e, w in zip(g.hyperedges, g.edge_weights) if i in e]
    if not edges:
        raise IsolatedNodeError([i], f"node {i} has no incident hyperedge; no context exists")
    nodes = sorted({v for e in edges for v in e})
    to_sub = {v: k for k, v in enumerate(nodes)}
    sub = Hypergraph(
        num_nodes=len(nodes),
        hyperedges=tuple(tuple(to_sub[v] for v in e) for e in edges),
        edge_weights=tuple(weights),
    )
    return ContextHypergraph(center=i, sub=sub, node_map=tuple(nodes), center_sub=to_sub[i])


def clique_expansion(g: Hypergraph) -> Tensor:
    """Pairwise adjacency: 1 iff two distinct nodes share some hyperedge."""
    a = np.zeros((g.num_nodes, g.num_nodes))
    for e in g.hyperedges:
        for u in e:
            for v in e:
                if u != v:
                    a[u, v] = 1.0
    return Tensor(a)
