"""Edge graph construction: relations become the nodes of a new graph.

Two relations are linked when they share an endpoint (undirected link) or
form a path a->b, b->c (directed link from the first to the second).  Node
context machinery can then run unchanged over edge data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_model import SceneGraph

__all__ = ["EdgeGraph", "edge_order", "edge_graph_adjacency", "build_edge_graph"]


@dataclass(frozen=True)
class EdgeGraph:
    features: np.ndarray  # (E, 2F + Fe): [src features, dst features, edge features]
    adjacency: np.ndarray  # (E, E) uint8, entry (k, l) = 1 iff edge-node k -> edge-node l
    edge_index: tuple[int, ...]  # edge-node k is original edge edge_index[k]

    @property
    def n(self) -> int:
        return len(self.edge_index)


def edge_order(graph: SceneGraph) -> list[int]:
    """Indices of ``graph.edges`` sorted by (src, dst)."""
    return sorted(range(graph.num_edges), key=lambda k: (graph.edges[k].src, graph.edges[k].dst))


def edge_graph_adjacency(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Connection matrix for edges given as parallel src/dst arrays.

    The rules are combined as a set union, so a pair matching several rules
    still gets a single 0/1 entry per direction.  A reversed pair (a->b,
    b->a) fires the path rule both ways.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    shared = (src[:, None] == src[None, :]) | (dst[:, None] == dst[None, :])
    path = dst[:, None] == src[None, :]  # k -> l when dst_k == src_l
    adj = shared | path
    np.fill_diagonal(adj, False)
    return adj.astype(np.uint8)


def build_edge_graph(graph: SceneGraph, node_features: np.ndarray,
                     edge_features: np.ndarray | None = None) -> EdgeGraph:
    """Edge graph of ``graph`` in ``edge_order``.

    ``edge_features`` (optional) is indexed like ``graph.edges``.
    """
    node_features = np.asarray(node_features, dtype=np.float64)
    if node_features.ndim != 2 or len(node_features) != graph.num_nodes:
        raise ValueError(f"expected {graph.num_nodes} node feature rows, got shape {node_features.shape}")
    order = edge_order(graph)
    src = np.array([graph.edges[k].src for k in order], dtype=np.int64)
    dst = np.array([graph.edges[k].dst for k in order], dtype=np.int64)
    parts = [node_features[src], node_features[dst]]
    if edge_features is not None:
        edge_features = np.asarray(edge_features, dtype=np.float64).reshape(graph.num_edges, -1)
        parts.append(edge_features[order])
    feats = np.concatenate(parts, axis=1) if order else np.zeros((0, sum(p.shape[1] for p in parts)))
    return EdgeGraph(feats, edge_graph_adjacency(src, dst), tuple(order))
