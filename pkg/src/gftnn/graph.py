"""Interaction graphs for highway traffic scenes.

A scenario is modelled by two factor graphs: a temporal line graph over the
observed time steps and a spatial graph over the vehicles (spider by
default, optionally a fully connected mesh). Runtime code only ever touches
the factors; the explicit Cartesian product is provided because its
Laplacian, the Kronecker sum of the factor Laplacians, makes the
factorization checkable.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# Minimum hub distance used for inverse-distance edge weights. Ghost
# vehicles sit exactly on the target, so raw distances can be zero.
D_FLOOR = 0.1


def _frozen(values, dtype=np.float64):
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph.

    ``weight_matrix`` entries are meaningful only where ``adjacency`` is 1;
    unweighted graphs carry weight 1 on every edge.
    """

    n_nodes: int
    weight_matrix: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        n = self.n_nodes
        if n < 1:
            raise ValueError(f"graph needs at least one node, got {n}")
        adj = np.asarray(self.adjacency, dtype=np.float64)
        w = np.asarray(self.weight_matrix, dtype=np.float64)
        if adj.shape != (n, n):
            raise ValueError(f"adjacency shape {adj.shape} does not match n_nodes={n}")
        if w.shape != (n, n):
            raise ValueError(f"weight matrix shape {w.shape} does not match n_nodes={n}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if not np.all((adj == 0.0) | (adj == 1.0)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diagonal(adj) != 0.0):
            raise ValueError("self loops are not allowed")
        if not np.all(np.isfinite(w)):
            raise ValueError("edge weights must be finite")
        if np.max(np.abs(w - w.T), initial=0.0) > 1e-12:
            raise ValueError("weight matrix must be symmetric")
        if np.any(w[adj == 1.0] <= 0.0):
            raise ValueError("edges must carry positive weights")
        object.__setattr__(self, "adjacency", _frozen(adj))
        object.__setattr__(self, "weight_matrix", _frozen(w))

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def graph_id(self) -> str:
        """Short content hash, stable across processes."""
        h = hashlib.sha1()
        h.update(np.int64(self.n_nodes).tobytes())
        h.update(self.adjacency.tobytes())
        h.update(self.weight_matrix.tobytes())
        return h.hexdigest()[:12]


@dataclass(frozen=True)
class Laplacian:
    """Combinatorial Laplacian D - W of an undirected weighted graph."""

    matrix: np.ndarray
    source_graph_id: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"laplacian must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("laplacian entries must be finite")
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-9:
            raise ValueError("laplacian must be symmetric")
        if np.max(np.abs(m.sum(axis=1)), initial=0.0) > 1e-9:
            raise ValueError("laplacian rows must sum to zero")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


def build_line_graph(n_nodes: int) -> Graph:
    """Path over ``n_nodes`` consecutive time steps, unit weights."""
    if n_nodes < 2:
        raise ValueError(f"line graph needs at least 2 nodes, got {n_nodes}")
    adj = np.zeros((n_nodes, n_nodes))
    idx = np.arange(n_nodes - 1)
    adj[idx, idx + 1] = 1.0
    adj[idx + 1, idx] = 1.0
    return Graph(n_nodes, adj.copy(), adj)


def build_spider_graph(n_nodes: int, hub_index: int = 0) -> Graph:
    """Star: every node connects to the hub (the target vehicle) only."""
    if n_nodes < 2:
        raise ValueError(f"spider graph needs at least 2 nodes, got {n_nodes}")
    if not 0 <= hub_index < n_nodes:
        raise IndexError(f"hub index {hub_index} out of range for {n_nodes} nodes")
    adj = np.zeros((n_nodes, n_nodes))
    adj[hub_index, :] = 1.0
    adj[:, hub_index] = 1.0
    adj[hub_index, hub_index] = 0.0
    return Graph(n_nodes, adj.copy(), adj)


def build_mesh_graph(n_nodes: int) -> Graph:
    """Complete graph: every vehicle pair interacts, unit weights."""
    if n_nodes < 2:
        raise ValueError(f"mesh graph needs at least 2 nodes, got {n_nodes}")
    adj = np.ones((n_nodes, n_nodes)) - np.eye(n_nodes)
    return Graph(n_nodes, adj.copy(), adj)


def from_adjacency(adjacency, weight_matrix=None) -> Graph:
    """Scene-specific graph from an explicit adjacency matrix."""
    adj = np.asarray(adjacency, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    if weight_matrix is None:
        weight_matrix = adj.copy()
    return Graph(adj.shape[0], weight_matrix, adj)


def apply_inverse_distance_weights(graph: Graph, positions, hub_index: int = 0) -> Graph:
    """Reweight a spider graph by inverse hub distance.

    positions: (n_nodes, 2) planar coordinates. Distances below D_FLOOR are
    clamped so co-located ghost vehicles get weight 1/D_FLOOR instead of a
    singularity.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (graph.n_nodes, 2):
        raise ValueError(f"positions shape {pos.shape} does not match {graph.n_nodes} nodes")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    off_hub = graph.adjacency.copy()
    off_hub[hub_index, :] = 0.0
    off_hub[:, hub_index] = 0.0
    if off_hub.any():
        raise ValueError("inverse-distance weighting expects a hub-and-spokes graph")
    d = np.hypot(pos[:, 0] - pos[hub_index, 0], pos[:, 1] - pos[hub_index, 1])
    w_edge = 1.0 / np.maximum(d, D_FLOOR)
    w = np.zeros_like(graph.weight_matrix)
    spokes = graph.adjacency[hub_index] == 1.0
    w[hub_index, spokes] = w_edge[spokes]
    w[spokes, hub_index] = w_edge[spokes]
    return Graph(graph.n_nodes, w, graph.adjacency)


def laplacian(graph: Graph) -> Laplacian:
    eff = graph.weight_matrix * graph.adjacency
    mat = np.diag(eff.sum(axis=1)) - eff
    return Laplacian(mat, graph.graph_id())


def cartesian_product(g1: Graph, g2: Graph) -> Graph:
    """Cartesian product graph, nodes ordered (i1, i2) row-major.

    Edges connect (i1, i2)-(j1, i2) for i1~j1 and (i1, i2)-(i1, j2) for
    i2~j2, so the product Laplacian is L1 (x) I + I (x) L2.
    """
    i1 = np.eye(g1.n_nodes)
    i2 = np.eye(g2.n_nodes)
    adj = np.kron(g1.adjacency, i2) + np.kron(i1, g2.adjacency)
    eff1 = g1.weight_matrix * g1.adjacency
    eff2 = g2.weight_matrix * g2.adjacency
    w = np.kron(eff1, i2) + np.kron(i1, eff2)
    return Graph(g1.n_nodes * g2.n_nodes, w, adj)
