"""Node reordering that turns as many edges as possible into causal ones.

An edge s -> d is causal when s precedes d in node order, i.e. it lies in
the strict upper triangle of the adjacency matrix.  Only causal edges can
carry context, so nodes are sorted by strongly-connected component in
topological order of the condensation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph_model import RelationEdge, SceneGraph, to_adjacency

__all__ = [
    "NodeOrdering",
    "kosaraju_scc",
    "scc_topo_order",
    "bruteforce_component_order",
    "bruteforce_max_causal",
    "scc_topo_bf_order",
    "degree_order",
    "random_order",
    "identity_order",
    "make_ordering",
    "reorder",
    "causal_edge_count",
    "cir",
    "PREPROCESSORS",
]

PREPROCESSORS = ("none", "random", "degree", "scc", "scc-bf10")


@dataclass(frozen=True)
class NodeOrdering:
    """perm[p] is the original index of the node placed at position p."""

    perm: tuple[int, ...]
    tag: str = "identity"

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError("ordering is not a permutation")
        object.__setattr__(self, "perm", perm)

    def __len__(self) -> int:
        return len(self.perm)

    def inverse(self) -> "NodeOrdering":
        inv = [0] * len(self.perm)
        for pos, old in enumerate(self.perm):
            inv[old] = pos
        return NodeOrdering(tuple(inv), self.tag)


def _neighbours(adj: np.ndarray) -> tuple[list[list[int]], list[list[int]]]:
    a = np.asarray(adj) != 0
    out_nb = [np.flatnonzero(row).tolist() for row in a]
    in_nb = [np.flatnonzero(col).tolist() for col in a.T]
    return out_nb, in_nb


def kosaraju_scc(adj: np.ndarray) -> list[list[int]]:
    """Strongly connected components, emitted in topological order of the condensation.

    DFS starts at the lowest unvisited index and visits neighbours in
    ascending order, so the result is fully deterministic.  Members of each
    component are sorted ascending.
    """
    n = len(adj)
    out_nb, in_nb = _neighbours(adj)

    visited = [False] * n
    finished: list[int] = []
    for root in range(n):
        if visited[root]:
            continue
        visited[root] = True
        stack = [(root, iter(out_nb[root]))]
        while stack:
            v, it = stack[-1]
            for w in it:
                if not visited[w]:
                    visited[w] = True
                    stack.append((w, iter(out_nb[w])))
                    break
            else:
                stack.pop()
                finished.append(v)

    comp_of = [-1] * n
    comps: list[list[int]] = []
    for root in reversed(finished):
        if comp_of[root] >= 0:
            continue
        cid = len(comps)
        comp_of[root] = cid
        members = [root]
        stack = [root]
        while stack:
            v = stack.pop()
            for w in in_nb[v]:
                if comp_of[w] < 0:
                    comp_of[w] = cid
                    members.append(w)
                    stack.append(w)
        comps.append(sorted(members))
    return comps


def scc_topo_order(adj: np.ndarray) -> NodeOrdering:
    perm = [v for comp in kosaraju_scc(adj) for v in comp]
    return NodeOrdering(tuple(perm), "scc_topo")


def bruteforce_component_order(adj: np.ndarray, component, max_size: int = 10) -> list[int]:
    """Internal order of ``component`` maximising causal internal edges.

    Exact via a subset DP, equivalent to enumerating all |C|! orders; ties go
    to the lexicographically smallest order.  Raises ValueError for
    components larger than ``max_size``.
    """
    members = sorted(int(v) for v in component)
    k = len(members)
    if k > max_size:
        raise ValueError(f"component of size {k} exceeds brute-force limit {max_size}")
    if k <= 1:
        return members
    a = np.asarray(adj) != 0
    sub = a[np.ix_(members, members)]
    out_mask = [sum(1 << j for j in np.flatnonzero(sub[i])) for i in range(k)]

    full = (1 << k) - 1
    # best[S]: max causal edges when the members in S are ordered among themselves
    best = [0] * (1 << k)
    for s in range(1, 1 << k):
        top = 0
        rest = s
        while rest:
            low = rest & -rest
            v = low.bit_length() - 1
            rest ^= low
            t = s ^ low
            val = bin(out_mask[v] & t).count("1") + best[t]
            if val > top:
                top = val
        best[s] = top

    order: list[int] = []
    s = full
    while s:
        for v in range(k):
            bit = 1 << v
            if s & bit:
                t = s ^ bit
                if bin(out_mask[v] & t).count("1") + best[t] == best[s]:
                    order.append(members[v])
                    s = t
                    break
    return order


def scc_topo_bf_order(adj: np.ndarray, max_size: int = 10) -> NodeOrdering:
    perm: list[int] = []
    for comp in kosaraju_scc(adj):
        if len(comp) > max_size:
            perm.extend(comp)
        else:
            perm.extend(bruteforce_component_order(adj, comp, max_size))
    return NodeOrdering(tuple(perm), "scc_topo_bruteforce")


def bruteforce_max_causal(adj: np.ndarray) -> int:
    """Maximum causal-edge count over all n! orderings (exhaustive; small n only)."""
    a = np.asarray(adj) != 0
    n = len(a)
    best = 0
    for perm in itertools.permutations(range(n)):
        p = np.asarray(perm, dtype=np.int64)
        best = max(best, int(np.triu(a[np.ix_(p, p)], 1).sum()))
    return best


def identity_order(n: int) -> NodeOrdering:
    return NodeOrdering(tuple(range(n)), "identity")


def random_order(n: int, seed: int = 0) -> NodeOrdering:
    rng = np.random.default_rng(seed)
    return NodeOrdering(tuple(rng.permutation(n).tolist()), "random")


def degree_order(adj: np.ndarray) -> NodeOrdering:
    """Net out-degree descending (sources first), ties by index."""
    a = np.asarray(adj) != 0
    net = a.sum(axis=1).astype(np.int64) - a.sum(axis=0).astype(np.int64)
    perm = sorted(range(len(a)), key=lambda v: (-int(net[v]), v))
    return NodeOrdering(tuple(perm), "degree")


def make_ordering(method: str, graph: SceneGraph, seed: int = 0) -> NodeOrdering:
    """Ordering for one of PREPROCESSORS.  Undirected graphs always keep their order."""
    n = graph.num_nodes
    if method not in PREPROCESSORS:
        raise ValueError(f"unknown preprocessor {method!r}")
    if method == "none" or not graph.directed:
        return identity_order(n)
    if method == "random":
        return random_order(n, seed)
    adj = to_adjacency(graph)
    if method == "degree":
        return degree_order(adj)
    if method == "scc":
        return scc_topo_order(adj)
    return scc_topo_bf_order(adj, 10)


def reorder(graph: SceneGraph, ordering: NodeOrdering) -> SceneGraph:
    """Place original node ``ordering.perm[p]`` at position p; edges follow and are sorted."""
    if len(ordering) != graph.num_nodes:
        raise ValueError(f"ordering has {len(ordering)} entries for {graph.num_nodes} nodes")
    inv = ordering.inverse().perm
    nodes = tuple(graph.nodes[old] for old in ordering.perm)
    edges = []
    for e in graph.edges:
        s, d = inv[e.src], inv[e.dst]
        if not graph.directed and s > d:
            s, d = d, s
        edges.append(RelationEdge(s, d, e.rel_id, e.weight))
    edges.sort(key=lambda e: (e.src, e.dst))
    return SceneGraph(graph.image_size, nodes, tuple(edges), graph.directed)


def causal_edge_count(adj: np.ndarray) -> int:
    return int(np.triu(np.asarray(adj) != 0, 1).sum())


def cir(before: np.ndarray, after: np.ndarray):
    """Context improvement rate: causal edges after / max(causal edges before, 1)."""
    b = np.asarray(before) != 0
    a = np.asarray(after) != 0
    if b.shape != a.shape or int(b.sum()) != int(a.sum()):
        raise ValueError("before/after adjacency differ in node or edge count")
    return Fraction(causal_edge_count(a), max(causal_edge_count(b), 1))
