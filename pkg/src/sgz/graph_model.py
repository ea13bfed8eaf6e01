"""Scene-graph data model, validation, JSON ingestion and the raw baseline format.

A scene graph is a list of objects (type + pixel box) and a list of typed,
optionally weighted, relations between them.  Everything here is immutable;
helpers return new objects.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "ObjectNode",
    "RelationEdge",
    "SceneGraph",
    "Dataset",
    "ValidationReport",
    "validate",
    "to_adjacency",
    "edges_from_adjacency",
    "raw_bytes",
    "raw_size_bits",
    "load_json",
    "save_json",
    "dataset_from_dict",
    "dataset_to_dict",
    "make_graph",
]

U16_MAX = 0xFFFF
HEADER_BITS = 96
NODE_BITS = 80
EDGE_BITS = 48
WEIGHT_BITS = 8


class DataError(ValueError):
    """Malformed or out-of-range scene-graph data."""


@dataclass(frozen=True)
class ObjectNode:
    type_id: int
    box: tuple[int, int, int, int]  # x, y, w, h in pixels


@dataclass(frozen=True)
class RelationEdge:
    src: int
    dst: int
    rel_id: int
    weight: int | None = None


@dataclass(frozen=True)
class SceneGraph:
    image_size: tuple[int, int]
    nodes: tuple[ObjectNode, ...] = ()
    edges: tuple[RelationEdge, ...] = ()
    directed: bool = True

    def __post_init__(self):
        # accept lists from callers but always store tuples
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def has_weights(self) -> bool:
        return bool(self.edges) and self.edges[0].weight is not None

    def canonical(self) -> "SceneGraph":
        """Same graph with edges sorted by (src, dst)."""
        edges = sorted(self.edges, key=lambda e: (e.src, e.dst))
        return SceneGraph(self.image_size, self.nodes, tuple(edges), self.directed)


@dataclass
class Dataset:
    object_vocab: list[str]
    relation_vocab: list[str]
    graphs: list[SceneGraph] = field(default_factory=list)

    @property
    def num_object_types(self) -> int:
        return len(self.object_vocab)

    @property
    def num_relation_types(self) -> int:
        return len(self.relation_vocab)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(graph: SceneGraph, num_object_types: int | None = None,
             num_relation_types: int | None = None) -> ValidationReport:
    """Check every structural invariant; returns all violations found."""
    out: list[str] = []
    width, height = graph.image_size
    if not (1 <= width <= U16_MAX and 1 <= height <= U16_MAX):
        out.append(f"image size {graph.image_size} outside [1, {U16_MAX}]")
    for i, node in enumerate(graph.nodes):
        if node.type_id < 0 or (num_object_types is not None and node.type_id >= num_object_types):
            out.append(f"node {i}: type_id {node.type_id} out of range")
        if len(node.box) != 4:
            out.append(f"node {i}: box must have 4 entries")
            continue
        x, y, w, h = node.box
        if min(x, y) < 0:
            out.append(f"node {i}: negative box origin")
        if w < 1 or h < 1:
            out.append(f"node {i}: box size must be >= 1")
        if x + w > width or y + h > height:
            out.append(f"node {i}: box exceeds image")

    n = graph.num_nodes
    seen: set[tuple[int, int]] = set()
    weighted = [e.weight is not None for e in graph.edges]
    if any(weighted) and not all(weighted):
        out.append("weights must be present on all edges or on none")
    for k, e in enumerate(graph.edges):
        if not (0 <= e.src < n and 0 <= e.dst < n):
            out.append(f"edge {k}: endpoint out of range")
            continue
        if e.src == e.dst:
            out.append(f"edge {k}: self-loop")
        if not graph.directed and e.src > e.dst:
            out.append(f"edge {k}: undirected edge must be stored with src < dst")
        if (e.src, e.dst) in seen:
            out.append(f"edge {k}: duplicate edge ({e.src}, {e.dst})")
        seen.add((e.src, e.dst))
        if e.rel_id < 0 or (num_relation_types is not None and e.rel_id >= num_relation_types):
            out.append(f"edge {k}: rel_id {e.rel_id} out of range")
        if e.weight is not None and not 0 <= e.weight <= 255:
            out.append(f"edge {k}: weight {e.weight} outside [0, 255]")
    return ValidationReport(tuple(out))


def to_adjacency(graph: SceneGraph) -> np.ndarray:
    """Dense n x n uint8 matrix, entry (s, d) = 1 iff edge s -> d.

    Undirected graphs give a symmetric matrix.
    """
    n = graph.num_nodes
    adj = np.zeros((n, n), dtype=np.uint8)
    if graph.edges:
        src = np.fromiter((e.src for e in graph.edges), dtype=np.int64)
        dst = np.fromiter((e.dst for e in graph.edges), dtype=np.int64)
        adj[src, dst] = 1
        if not graph.directed:
            adj[dst, src] = 1
    return adj


def edges_from_adjacency(adj: np.ndarray, directed: bool = True) -> list[tuple[int, int]]:
    """(src, dst) pairs in lexicographic order; upper triangle only if undirected."""
    a = np.asarray(adj)
    if not directed:
        a = np.triu(a, 1)
    src, dst = np.nonzero(a)
    return list(zip(src.tolist(), dst.tolist()))


def raw_bytes(graph: SceneGraph) -> bytes:
    """Canonical little-endian raw serialization (the compression-ratio denominator)."""
    width, height = graph.image_size
    parts = [struct.pack("<IIHH", graph.num_nodes, graph.num_edges, width, height)]
    for node in graph.nodes:
        parts.append(struct.pack("<5H", node.type_id, *node.box))
    for e in graph.edges:
        parts.append(struct.pack("<3H", e.src, e.dst, e.rel_id))
        if e.weight is not None:
            parts.append(struct.pack("<B", e.weight))
    return b"".join(parts)


def raw_size_bits(graph: SceneGraph) -> int:
    weight_bits = WEIGHT_BITS * sum(e.weight is not None for e in graph.edges)
    return HEADER_BITS + NODE_BITS * graph.num_nodes + EDGE_BITS * graph.num_edges + weight_bits


# --- JSON ingestion -------------------------------------------------------


def _graph_from_json(rec: dict, index: int, n_obj: int, n_rel: int) -> SceneGraph:
    where = f"graph {index}"
    try:
        width, height = (int(v) for v in rec["image_size"])
        nodes = []
        for i, nd in enumerate(rec.get("nodes", [])):
            box = tuple(int(v) for v in nd["box"])
            if len(box) != 4:
                raise DataError(f"{where}, node {i}: box must have 4 entries")
            nodes.append(ObjectNode(int(nd["t"]), box))
        edges = []
        for k, ed in enumerate(rec.get("edges", [])):
            w = ed.get("w")
            edges.append(RelationEdge(int(ed["s"]), int(ed["d"]), int(ed["r"]),
                                      None if w is None else int(w)))
        directed = bool(rec.get("directed", True))
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: schema violation ({exc!r})") from exc
    graph = SceneGraph((width, height), tuple(nodes), tuple(edges), directed)
    report = validate(graph, n_obj, n_rel)
    if not report.ok:
        raise DataError(f"{where}: " + "; ".join(report.violations))
    return graph


def _graph_to_json(graph: SceneGraph) -> dict:
    edges = []
    for e in graph.edges:
        rec = {"s": e.src, "d": e.dst, "r": e.rel_id}
        if e.weight is not None:
            rec["w"] = e.weight
        edges.append(rec)
    return {
        "image_size": list(graph.image_size),
        "nodes": [{"t": n.type_id, "box": list(n.box)} for n in graph.nodes],
        "edges": edges,
        "directed": graph.directed,
    }


def dataset_from_dict(doc: dict) -> Dataset:
    try:
        vocab = doc["vocab"]
        objects = [str(v) for v in vocab["objects"]]
        relations = [str(v) for v in vocab["relations"]]
        records = doc["graphs"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"dataset: schema violation ({exc!r})") from exc
    if not isinstance(records, list):
        raise DataError("dataset: 'graphs' must be a list")
    graphs = [_graph_from_json(rec, i, len(objects), len(relations))
              for i, rec in enumerate(records)]
    return Dataset(objects, relations, graphs)


def dataset_to_dict(dataset: Dataset) -> dict:
    return {
        "vocab": {"objects": list(dataset.object_vocab),
                  "relations": list(dataset.relation_vocab)},
        "graphs": [_graph_to_json(g) for g in dataset.graphs],
    }


def load_json(path: str | Path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc})") from exc
    return dataset_from_dict(doc)


def save_json(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(dataset)), encoding="utf-8")


def make_graph(image_size: Sequence[int], nodes: Iterable[tuple], edges: Iterable[tuple] = (),
               directed: bool = True) -> SceneGraph:
    """Shorthand constructor: nodes as (type, (x, y, w, h)), edges as (s, d, r[, w])."""
    return SceneGraph(
        tuple(image_size),
        tuple(ObjectNode(int(t), tuple(int(v) for v in box)) for t, box in nodes),
        tuple(RelationEdge(*(int(v) for v in e)) for e in edges),
        directed,
    )
