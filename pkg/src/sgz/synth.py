"""Seeded synthetic scene graphs.

``partof`` graphs have whole objects containing part objects: every part
sits inside its whole's box at a type-dependent relative position, part
types depend on the whole's type, and relation types follow a rule table
indexed by a per-graph mode and the endpoint types.  ``er`` graphs are
Erdos-Renyi with uniform labels and boxes (no exploitable correlation).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph_model import Dataset, ObjectNode, RelationEdge, SceneGraph

__all__ = ["SynthConfig", "synth_generate", "rule_table"]


@dataclass(frozen=True)
class SynthConfig:
    num_graphs: int = 200
    kind: str = "partof"
    min_nodes: int = 10
    max_nodes: int = 24
    density: float = 0.08  # E / possible pairs (N (N - 1), halved if undirected)
    num_object_types: int = 12
    num_relation_types: int = 6
    modes: int = 2  # relation rule sets; one is drawn per graph
    directed: bool = True
    weights: bool = False
    jitter: float = 0.05  # part placement noise, as a fraction of the whole's size
    min_image: int = 128
    max_image: int = 256
    seed: int = 7

    def __post_init__(self):
        if self.kind not in ("partof", "er"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"density {self.density} is infeasible (must lie in [0, 1])")
        if not 1 <= self.min_nodes <= self.max_nodes:
            raise ValueError("need 1 <= min_nodes <= max_nodes")
        if self.kind == "partof" and self.num_object_types < 2:
            raise ValueError("part-of graphs need at least 2 object types")
        if self.num_relation_types < 1 or self.modes < 1:
            raise ValueError("need at least one relation type and one mode")
        if not 8 <= self.min_image <= self.max_image <= 0xFFFF:
            raise ValueError("image size bounds must satisfy 8 <= min <= max <= 65535")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def rule_table(cfg: SynthConfig) -> np.ndarray:
    """rel = table[mode, src_type, dst_type]; derived from the seed alone."""
    rng = np.random.default_rng([cfg.seed, 1])
    t = cfg.num_object_types
    return rng.integers(0, cfg.num_relation_types, size=(cfg.modes, t, t))


def _vocab(cfg: SynthConfig) -> tuple[list[str], list[str]]:
    half = max(cfg.num_object_types // 2, 1)
    objects = [f"whole{i}" if i < half else f"part{i - half}" for i in range(cfg.num_object_types)]
    relations = [f"rel{i}" for i in range(cfg.num_relation_types)]
    return objects, relations


def _part_box(rng, whole, rel_pos, rel_size, jitter, width, height):
    wx, wy, ww, wh = whole
    pw = max(1, int(round(ww * rel_size[0])))
    ph = max(1, int(round(wh * rel_size[1])))
    px = wx + int(round((ww - pw) * np.clip(rel_pos[0] + rng.normal(0, jitter), 0, 1)))
    py = wy + int(round((wh - ph) * np.clip(rel_pos[1] + rng.normal(0, jitter), 0, 1)))
    px = min(max(px, 0), width - pw)
    py = min(max(py, 0), height - ph)
    return (px, py, pw, ph)


def _partof_graph(rng, cfg: SynthConfig, rules, part_of, layout):
    n = int(rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
    width = int(rng.integers(cfg.min_image, cfg.max_image + 1))
    height = int(rng.integers(cfg.min_image, cfg.max_image + 1))
    half = max(cfg.num_object_types // 2, 1)
    n_whole = max(1, int(round(0.3 * n)))
    mode = int(rng.integers(cfg.modes))

    nodes: list[ObjectNode] = []
    parent: list[int] = []
    for _ in range(n_whole):
        t = int(rng.integers(half))
        ww = int(rng.integers(width // 4, width // 2 + 1))
        wh = int(rng.integers(height // 4, height // 2 + 1))
        box = (int(rng.integers(0, width - ww + 1)), int(rng.integers(0, height - wh + 1)), ww, wh)
        nodes.append(ObjectNode(t, box))
        parent.append(-1)
    for _ in range(n - n_whole):
        p = int(rng.integers(n_whole))
        t = int(part_of[nodes[p].type_id, rng.integers(part_of.shape[1])])
        pos, size = layout[t]
        nodes.append(ObjectNode(t, _part_box(rng, nodes[p].box, pos, size, cfg.jitter, width, height)))
        parent.append(p)

    pairs_possible = n * (n - 1) if cfg.directed else n * (n - 1) // 2
    target = int(round(cfg.density * pairs_possible))
    pairs = [(parent[v], v) for v in range(n) if parent[v] >= 0]
    rng.shuffle(pairs)
    pairs = pairs[:target]
    taken = set(pairs)
    if cfg.directed:
        candidates = [(s, d) for s in range(n) for d in range(n) if s != d]
    else:
        candidates = [(s, d) for s in range(n) for d in range(n) if s < d]
        taken = {(min(s, d), max(s, d)) for s, d in taken}
        pairs = sorted(taken)
    free = [c for c in candidates if c not in taken]
    extra = max(0, min(target - len(pairs), len(free)))
    pick = rng.choice(len(free), size=extra, replace=False) if extra else []
    pairs += [free[int(k)] for k in pick]
    return n, width, height, nodes, pairs, mode


def _er_graph(rng, cfg: SynthConfig):
    n = int(rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
    width = int(rng.integers(cfg.min_image, cfg.max_image + 1))
    height = int(rng.integers(cfg.min_image, cfg.max_image + 1))
    nodes = []
    for _ in range(n):
        w = int(rng.integers(1, width + 1))
        h = int(rng.integers(1, height + 1))
        box = (int(rng.integers(0, width - w + 1)), int(rng.integers(0, height - h + 1)), w, h)
        nodes.append(ObjectNode(int(rng.integers(cfg.num_object_types)), box))
    hit = rng.random((n, n)) < cfg.density
    pairs = [(s, d) for s in range(n) for d in range(n)
             if s != d and hit[s, d] and (cfg.directed or s < d)]
    return n, width, height, nodes, pairs, 0


def synth_generate(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    rules = rule_table(cfg)
    half = max(cfg.num_object_types // 2, 1)
    n_parts = max(cfg.num_object_types - half, 1)
    layout_rng = np.random.default_rng([cfg.seed, 2])
    part_of = half + layout_rng.integers(0, n_parts, size=(half, 2))
    part_of = np.minimum(part_of, cfg.num_object_types - 1)
    layout = {t: (layout_rng.uniform(0.1, 0.9, 2), layout_rng.uniform(0.2, 0.45, 2))
              for t in range(cfg.num_object_types)}
    weight_base = np.random.default_rng([cfg.seed, 3]).integers(40, 216, size=cfg.num_relation_types)

    graphs = []
    for _ in range(cfg.num_graphs):
        if cfg.kind == "partof":
            n, width, height, nodes, pairs, mode = _partof_graph(rng, cfg, rules, part_of, layout)
        else:
            n, width, height, nodes, pairs, mode = _er_graph(rng, cfg)
        perm = rng.permutation(n)  # hide the generation order
        pos = np.empty(n, dtype=np.int64)
        pos[perm] = np.arange(n)
        shuffled = [nodes[int(v)] for v in perm]
        edges = []
        for s, d in pairs:
            ts, td = nodes[s].type_id, nodes[d].type_id
            if cfg.kind == "partof":
                rel = int(rules[mode, ts, td])
            else:
                rel = int(rng.integers(cfg.num_relation_types))
            w = None
            if cfg.weights:
                w = int(np.clip(weight_base[rel] + rng.normal(0, 6), 0, 255))
            a, b = int(pos[s]), int(pos[d])
            if not cfg.directed and a > b:
                a, b = b, a
            edges.append(RelationEdge(a, b, rel, w))
        edges.sort(key=lambda e: (e.src, e.dst))
        graphs.append(SceneGraph((width, height), tuple(shuffled), tuple(edges), cfg.directed))
    objects, relations = _vocab(cfg)
    return Dataset(objects, relations, graphs)
