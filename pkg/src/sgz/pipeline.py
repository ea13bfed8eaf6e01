"""Training, compression, decompression, checkpoints and evaluation.

Compression and decompression run the same sequential routine
(``_code_graph``); only the symbol I/O differs.  The encoder side reads the
true symbol and records it, the decoder side pops it from the rANS stream.
Every probability is computed from identical inputs on both sides, so the
integer PMF tables match bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .coder import Bitstream, CodecError, RansDecoder, RansEncoder, STREAMS, deframe, frame
from .diff_core import adam_step
from .edge_graph import edge_graph_adjacency
from .entropy_model import DiscretePMF, bernoulli_pmf, categorical_pmf, uniform_pmf
from .graph_model import (DataError, Dataset, ObjectNode, RelationEdge, SceneGraph, raw_bytes,
                          raw_size_bits, to_adjacency, validate)
from .predictors import Batch, PredictorConfig, SceneGraphModel, location_ranges, node_features
from .preprocess import NodeOrdering, cir, make_ordering, reorder

__all__ = [
    "TrainingError",
    "Checkpoint",
    "split_indices",
    "prepare",
    "train",
    "compress",
    "decompress",
    "compress_bytes",
    "decompress_bytes",
    "CodecTrace",
    "trace_encode",
    "trace_replay",
    "VerifyReport",
    "verify",
    "GraphMetrics",
    "evaluate_graph",
    "evaluate",
    "summarize",
    "deflate_ratio",
    "save_checkpoint",
    "load_checkpoint",
]

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SGZ1"
CKPT_KIND = b"M"


class TrainingError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    model: SceneGraphModel
    object_vocab: list[str]
    relation_vocab: list[str]
    history: list[float] = field(default_factory=list)
    preproc: str = "scc"

    @property
    def config(self) -> PredictorConfig:
        return self.model.cfg

    def check_graph(self, graph: SceneGraph) -> None:
        cfg = self.config
        report = validate(graph, cfg.num_object_types, cfg.num_relation_types)
        if not report.ok:
            raise DataError("graph does not match the checkpoint vocabulary: "
                            + "; ".join(report.violations))
        if graph.has_weights and not cfg.weights:
            raise DataError("graph has relation weights but the checkpoint has no weight model")


# --- checkpoint I/O -------------------------------------------------------


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    params = ckpt.model.params
    meta = {
        "format": 1,
        "config": ckpt.config.to_dict(),
        "vocab": {"objects": ckpt.object_vocab, "relations": ckpt.relation_vocab},
        "history": ckpt.history,
        "preproc": ckpt.preproc,
        "params": [[name, list(p.shape)] for name, p in params.items()],
    }
    head = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = b"".join(p.value.astype("<f8").tobytes() for p in params.values())
    return CKPT_MAGIC + CKPT_KIND + struct.pack("<I", len(head)) + head + body


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if data[:4] != CKPT_MAGIC or data[4:5] != CKPT_KIND:
        raise DataError("not an SGZ1 model checkpoint")
    (hlen,) = struct.unpack_from("<I", data, 5)
    meta = json.loads(data[9:9 + hlen].decode("utf-8"))
    model = SceneGraphModel(PredictorConfig.from_dict(meta["config"]))
    pos = 9 + hlen
    arrays = {}
    for name, shape in meta["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(data):
            raise DataError(f"checkpoint truncated inside parameter {name!r}")
        arrays[name] = np.frombuffer(data[pos:end], dtype="<f8").reshape(shape)
        pos = end
    if set(arrays) != set(model.params):
        raise DataError("checkpoint parameters do not match its configuration")
    model.params.load_state(arrays)
    return Checkpoint(model, list(meta["vocab"]["objects"]), list(meta["vocab"]["relations"]),
                      list(meta.get("history", [])), meta.get("preproc", "scc"))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> str:
    data = checkpoint_bytes(ckpt)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: str | Path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


# --- training -------------------------------------------------------------


def split_indices(n: int, seed: int = 7, train_fraction: float = 0.8) -> tuple[list[int], list[int]]:
    """Seed-stable hash split of graph indices."""
    train_idx, test_idx = [], []
    for i in range(n):
        h = hashlib.blake2b(f"{seed}:{i}".encode(), digest_size=8).digest()
        (train_idx if int.from_bytes(h, "little") / 2 ** 64 < train_fraction else test_idx).append(i)
    return train_idx, test_idx


def prepare(graph: SceneGraph, preproc: str = "scc", seed: int = 0) -> tuple[SceneGraph, NodeOrdering]:
    ordering = make_ordering(preproc, graph, seed)
    return reorder(graph, ordering), ordering


def train(dataset: Dataset, cfg: PredictorConfig, epochs: int = 30, lr: float = 1e-3,
          seed: int = 7, batch_size: int = 8, preproc: str = "scc",
          indices: Sequence[int] | None = None,
          on_epoch: Callable[[int, float], None] | None = None,
          on_step: Callable[[int, float], None] | None = None) -> Checkpoint:
    """Adam on the mean per-graph loss; deterministic given ``seed``."""
    if cfg.num_object_types != dataset.num_object_types or \
            cfg.num_relation_types != dataset.num_relation_types:
        raise DataError("model vocabulary sizes do not match the dataset")
    idx = list(range(len(dataset.graphs))) if indices is None else list(indices)
    graphs = [prepare(dataset.graphs[i], preproc)[0] for i in idx]
    graphs = [g for g in graphs if g.num_nodes]
    if not graphs:
        raise DataError("training split is empty")
    model = SceneGraphModel(cfg)
    rng = np.random.default_rng(seed)
    history: list[float] = []
    params = list(model.params.values())
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(graphs))
        total = 0.0
        count = 0
        for start in range(0, len(graphs), batch_size):
            batch = Batch([graphs[k] for k in order[start:start + batch_size]],
                          cfg.num_object_types, cfg.num_relation_types)
            loss, _, backward = model.graph_loss(batch, rng, train=True)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}, batch {start // batch_size}")
            model.params.zero_grad()
            backward()
            for p in params:
                if not np.all(np.isfinite(p.grad)):
                    raise TrainingError(f"non-finite gradient at epoch {epoch}")
            adam_step(params, lr)
            if on_step:
                on_step(step, loss)
            step += 1
            total += loss * batch.num_graphs
            count += batch.num_graphs
        history.append(total / count)
        log.info("epoch %d loss %.4f", epoch, history[-1])
        if on_epoch:
            on_epoch(epoch, history[-1])
    model.invalidate()
    return Checkpoint(model, list(dataset.object_vocab), list(dataset.relation_vocab), history,
                      preproc)


# --- sequential codec -------------------------------------------------------


class _EncoderIO:
    def __init__(self):
        self.encoders = {name: RansEncoder() for name in STREAMS}
        self.trace: list[tuple[str, DiscretePMF, int]] = []

    def code(self, stream: str, pmf: DiscretePMF, symbol) -> int:
        symbol = int(symbol)
        self.encoders[stream].push(symbol, pmf)
        self.trace.append((stream, pmf, symbol))
        return symbol


class _DecoderIO:
    def __init__(self, bs: Bitstream):
        self.decoders = {name: RansDecoder(bs.stream(name)) for name in STREAMS}
        self.trace: list[tuple[str, DiscretePMF, int]] = []

    def code(self, stream: str, pmf: DiscretePMF, symbol=None) -> int:
        try:
            s = self.decoders[stream].pop(pmf)
        except (IndexError, ValueError) as exc:
            raise CodecError(f"corrupt {stream!r} stream at byte "
                             f"{self.decoders[stream].position}") from exc
        self.trace.append((stream, pmf, s))
        return s

    def finish(self) -> None:
        for name, dec in self.decoders.items():
            try:
                dec.finish()
            except CodecError as exc:
                raise CodecError(f"{name} stream: {exc}") from None


class _ReplayIO:
    """Feeds a recorded symbol sequence back through the decoder-side routine."""

    def __init__(self, symbols: Sequence[int]):
        self.symbols = list(symbols)
        self.trace: list[tuple[str, DiscretePMF, int]] = []

    def code(self, stream: str, pmf: DiscretePMF, symbol=None) -> int:
        k = len(self.trace)
        s = self.symbols[k] if k < len(self.symbols) else pmf.lo
        s = min(max(int(s), pmf.lo), pmf.hi)  # a mutated prefix can shrink later ranges
        self.trace.append((stream, pmf, s))
        return s


def _code_graph(model: SceneGraphModel, io, n: int, size: tuple[int, int], directed: bool,
                weights: bool, graph: SceneGraph | None = None) -> SceneGraph:
    cfg = model.cfg
    t_o = cfg.num_object_types
    sizes = np.tile(np.asarray(size, dtype=np.int64), (n, 1))
    enc = graph is not None
    if enc:
        true_types = np.array([nd.type_id for nd in graph.nodes], dtype=np.int64)
        true_boxes = np.array([nd.box for nd in graph.nodes], dtype=np.int64).reshape(n, 4)
        true_adj = to_adjacency(graph)

    # unified prior
    c = cfg.latent_channels
    if enc:
        y_true = model.round_latents(model.prior_encode(
            node_features(true_types, true_boxes, sizes, t_o))[0])
    pmfs = model.prior_pmfs()
    y = np.zeros((n, c), dtype=np.int64)
    for i in range(n):
        for ch in range(c):
            y[i, ch] = io.code("prior", pmfs[ch], y_true[i, ch] if enc else None)
    r = model.prior_decode(y)[0]

    # structure, column sweep
    adj = np.zeros((n, n), dtype=np.uint8)
    out_emb, in_emb, _ = model.structure_static(r)
    for j in range(n):
        ctx_emb = model.structure_context(r, adj)[0] if j else None
        for i in range(j):
            p = model.edge_probability(out_emb, in_emb, ctx_emb, i, j)
            bit = io.code("structure", bernoulli_pmf(p), true_adj[i, j] if enc else None)
            adj[i, j] = bit
            if not directed:
                adj[j, i] = bit
        if directed:
            for i in range(j):
                p = model.edge_probability(out_emb, in_emb, ctx_emb, j, i)
                adj[j, i] = io.code("structure", bernoulli_pmf(p), true_adj[j, i] if enc else None)

    pairs = np.argwhere(np.triu(adj, 1) if not directed else adj)
    esrc, edst = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
    e = len(esrc)
    if enc:
        lookup = {(ed.src, ed.dst): ed for ed in graph.edges}
        true_rel = np.array([lookup[(s, d)].rel_id for s, d in zip(esrc, edst)], dtype=np.int64)
        true_w = np.array([lookup[(s, d)].weight or 0 for s, d in zip(esrc, edst)], dtype=np.int64)
    erel = np.full(e, -1, dtype=np.int64)
    ewt = np.zeros(e, dtype=np.int64)
    types = np.full(n, -1, dtype=np.int64)
    boxes = np.zeros((n, 4), dtype=np.int64)
    known = np.zeros(n, dtype=bool)

    def code_edges(x_nd):
        eadj = edge_graph_adjacency(esrc, edst)
        for k in range(e):
            logits, m, _ = model.edge_forward(r, x_nd, esrc, edst, erel, ewt, eadj)
            erel[k] = io.code("rel_type", categorical_pmf(logits[k]), true_rel[k] if enc else None)
            if weights:
                wl = model.weight_logits(m[k:k + 1], erel[k:k + 1])[0][0]
                ewt[k] = io.code("rel_weight", categorical_pmf(wl), true_w[k] if enc else None)

    def code_nodes():
        rel = np.full((n, n), -1, dtype=np.int64)
        rel[esrc, edst] = erel
        if not directed:
            rel[edst, esrc] = erel
        for i in range(n):
            x_nd = node_features(types, boxes, sizes, t_o, known)
            logits, m, _ = model.node_forward(x_nd, adj, rel, r)
            types[i] = io.code("node_type", categorical_pmf(logits[i]),
                               true_types[i] if enc else None)
            dyn = model.location_params(m[i:i + 1], types[i:i + 1])[0][0]
            for coord in range(4):
                lo, hi, scale = location_ranges(boxes[i], size)[coord]
                pmf = model.location_pmf(dyn[coord], coord, lo, hi, scale)
                boxes[i, coord] = io.code("node_loc", pmf, true_boxes[i, coord] if enc else None)
            known[i] = True

    if cfg.order == "edge-first":
        code_edges(None)
        code_nodes()
    elif cfg.order == "node-first":
        code_nodes()
        code_edges(node_features(types, boxes, sizes, t_o))
    else:
        code_nodes()
        code_edges(None)

    nodes = tuple(ObjectNode(int(t), tuple(int(v) for v in b)) for t, b in zip(types, boxes))
    edges = tuple(RelationEdge(int(s), int(d), int(rl), int(w) if weights else None)
                  for s, d, rl, w in zip(esrc, edst, erel, ewt))
    return SceneGraph(tuple(size), nodes, edges, directed)


def _perm_symbols(perm: Sequence[int]) -> list[tuple[int, DiscretePMF]]:
    """Lehmer code of a permutation under uniform PMFs."""
    remaining = list(range(len(perm)))
    out = []
    for v in perm:
        k = remaining.index(v)
        out.append((k, uniform_pmf(0, len(remaining) - 1)))
        remaining.pop(k)
    return out


def _perm_decode(data: bytes, n: int) -> list[int]:
    dec = RansDecoder(data)
    remaining = list(range(n))
    perm = [remaining.pop(dec.pop(uniform_pmf(0, len(remaining) - 1))) for _ in range(n)]
    dec.finish()
    return perm


@dataclass
class CodecTrace:
    """Per-symbol record of a coding run: (stream, pmf, symbol)."""

    entries: list[tuple[str, DiscretePMF, int]]

    def symbols(self) -> list[int]:
        return [s for _, _, s in self.entries]

    def ideal_bits(self) -> dict[str, float]:
        out = {name: 0.0 for name in STREAMS}
        for stream, pmf, s in self.entries:
            out[stream] += pmf.bits(s)
        return out


def _encode(graph: SceneGraph, ckpt: Checkpoint, preproc: str, keep_order: bool, seed: int):
    ckpt.check_graph(graph)
    cfg = ckpt.config
    prepared, ordering = prepare(graph, preproc, seed)
    io = _EncoderIO()
    weights = prepared.has_weights
    _code_graph(ckpt.model, io, prepared.num_nodes, prepared.image_size, prepared.directed,
                weights, prepared)
    bs = Bitstream(prepared.num_nodes, prepared.num_edges, prepared.image_size, prepared.directed,
                   cfg.order, weights, keep_order,
                   {name: enc.finish() for name, enc in io.encoders.items()})
    if keep_order:
        enc = RansEncoder()
        for s, pmf in _perm_symbols(ordering.perm):
            enc.push(s, pmf)
        bs.permutation = enc.finish()
    return bs, prepared, ordering, CodecTrace(io.trace)


def compress(graph: SceneGraph, ckpt: Checkpoint, preproc: str | None = None,
             keep_order: bool = False, seed: int = 0) -> Bitstream:
    return _encode(graph, ckpt, preproc or ckpt.preproc, keep_order, seed)[0]


def compress_bytes(graph: SceneGraph, ckpt: Checkpoint, preproc: str | None = None,
                   keep_order: bool = False, seed: int = 0) -> bytes:
    return frame(compress(graph, ckpt, preproc, keep_order, seed))


def _decode(bs: Bitstream, ckpt: Checkpoint) -> tuple[SceneGraph, CodecTrace]:
    cfg = ckpt.config
    if bs.order != cfg.order:
        raise CodecError(f"stream was coded in {bs.order!r} order, checkpoint expects {cfg.order!r}")
    if bs.weights and not cfg.weights:
        raise CodecError("stream carries relation weights but the checkpoint has no weight model")
    io = _DecoderIO(bs)
    graph = _code_graph(ckpt.model, io, bs.num_nodes, bs.image_size, bs.directed, bs.weights)
    io.finish()
    if graph.num_edges != bs.num_edges:
        raise CodecError(f"decoded {graph.num_edges} edges, header declares {bs.num_edges}")
    if bs.keep_order:
        perm = _perm_decode(bs.permutation, bs.num_nodes)
        graph = reorder(graph, NodeOrdering(tuple(perm)).inverse())
    return graph, CodecTrace(io.trace)


def decompress(bs: Bitstream, ckpt: Checkpoint) -> SceneGraph:
    return _decode(bs, ckpt)[0]


def decompress_bytes(data: bytes, ckpt: Checkpoint) -> SceneGraph:
    return decompress(deframe(data), ckpt)


def trace_encode(graph: SceneGraph, ckpt: Checkpoint, preproc: str | None = None):
    """(bitstream, preprocessed graph, encoder trace, decoder trace)."""
    bs, prepared, _, enc_trace = _encode(graph, ckpt, preproc or ckpt.preproc, False, 0)
    _, dec_trace = _decode(deframe(frame(bs)), ckpt)
    return bs, prepared, enc_trace, dec_trace


def trace_replay(ckpt: Checkpoint, bs: Bitstream, symbols: Sequence[int]) -> CodecTrace:
    """Run the decoder-side routine on a given symbol sequence (possibly mutated)."""
    io = _ReplayIO(symbols)
    _code_graph(ckpt.model, io, bs.num_nodes, bs.image_size, bs.directed, bs.weights)
    return CodecTrace(io.trace)


@dataclass
class VerifyReport:
    graphs: int = 0
    roundtrip_failures: list[int] = field(default_factory=list)
    pmf_mismatches: list[int] = field(default_factory=list)
    context_violations: list[tuple[int, int]] = field(default_factory=list)
    mutations: int = 0

    @property
    def ok(self) -> bool:
        return not (self.roundtrip_failures or self.pmf_mismatches or self.context_violations)

    def lines(self) -> list[str]:
        return [
            f"graphs checked: {self.graphs}",
            f"roundtrip failures: {len(self.roundtrip_failures)} {self.roundtrip_failures[:10]}",
            f"encoder/decoder PMF mismatches: {len(self.pmf_mismatches)} {self.pmf_mismatches[:10]}",
            f"context violations: {len(self.context_violations)} of {self.mutations} mutations "
            f"{self.context_violations[:10]}",
        ]


def _mutate(pmf: DiscretePMF, s: int, rng: np.random.Generator) -> int | None:
    if pmf.hi == pmf.lo:
        return None
    other = int(rng.integers(pmf.lo, pmf.hi))
    return other + 1 if other >= s else other


def verify(graphs: Sequence[SceneGraph], ckpt: Checkpoint, mutations: int = 8, seed: int = 0,
           preproc: str | None = None) -> VerifyReport:
    """Lossless roundtrip plus the context condition.

    Encoder and decoder traces must match table for table.  Then, for
    ``mutations`` sampled positions k per graph, symbol k is replaced by
    another in-range value and the decoder routine is replayed; every PMF
    up to and including position k must come out bit-identical.
    """
    rng = np.random.default_rng(seed)
    rep = VerifyReport()
    for gi, graph in enumerate(graphs):
        rep.graphs += 1
        bs, prepared, enc, dec = trace_encode(graph, ckpt, preproc)
        if decompress_bytes(frame(bs), ckpt) != prepared.canonical():
            rep.roundtrip_failures.append(gi)
        if len(enc.entries) != len(dec.entries) or any(
                a[1] != b[1] or a[2] != b[2] for a, b in zip(enc.entries, dec.entries)):
            rep.pmf_mismatches.append(gi)
            continue
        symbols = enc.symbols()
        if not symbols:
            continue
        for k in rng.choice(len(symbols), size=min(mutations, len(symbols)), replace=False):
            k = int(k)
            new = _mutate(enc.entries[k][1], symbols[k], rng)
            if new is None:
                continue
            mutated = symbols[:k] + [new] + symbols[k + 1:]
            replay = trace_replay(ckpt, bs, mutated).entries
            rep.mutations += 1
            if len(replay) <= k or any(replay[j][1] != enc.entries[j][1] for j in range(k + 1)):
                rep.context_violations.append((gi, k))
    return rep


# --- evaluation -------------------------------------------------------------


@dataclass
class GraphMetrics:
    num_nodes: int
    num_edges: int
    raw_bits: int
    header_bits: int
    stream_bits: dict[str, int]
    ideal_bits: dict[str, float]
    estimated_bits: float
    cir: float
    seconds: float
    lossless: bool

    @property
    def payload_bits(self) -> int:
        return sum(self.stream_bits.values())

    @property
    def total_bits(self) -> int:
        return self.header_bits + self.payload_bits

    @property
    def compression_ratio(self) -> float:
        return self.total_bits / self.raw_bits

    @property
    def bits_per_node(self) -> float:
        return self.stream_bits["structure"] / self.num_nodes if self.num_nodes else 0.0

    def row(self) -> dict:
        out = {
            "nodes": self.num_nodes, "edges": self.num_edges, "raw_bits": self.raw_bits,
            "total_bits": self.total_bits, "ratio": self.compression_ratio,
            "bits_per_node": self.bits_per_node, "cir": self.cir,
            "estimated_bits": self.estimated_bits, "lossless": self.lossless,
        }
        out.update({f"bits_{k}": v for k, v in self.stream_bits.items()})
        return out


def estimate_bits(ckpt: Checkpoint, prepared: SceneGraph) -> float:
    """graph_loss * N with rounded latents (the model's own rate estimate)."""
    if prepared.num_nodes == 0:
        return 0.0
    cfg = ckpt.config
    batch = Batch([prepared], cfg.num_object_types, cfg.num_relation_types)
    loss, _, _ = ckpt.model.graph_loss(batch, train=False)
    return loss * prepared.num_nodes


def evaluate_graph(graph: SceneGraph, ckpt: Checkpoint, preproc: str | None = None,
                   check: bool = True, seed: int = 0) -> GraphMetrics:
    preproc = preproc or ckpt.preproc
    t0 = time.perf_counter()
    bs, prepared, ordering, trace = _encode(graph, ckpt, preproc, False, seed)
    data = frame(bs)
    lossless = True
    if check:
        lossless = decompress_bytes(data, ckpt) == prepared.canonical()
    seconds = time.perf_counter() - t0
    before = to_adjacency(graph)
    after = to_adjacency(prepared)
    return GraphMetrics(
        graph.num_nodes, graph.num_edges, raw_size_bits(graph), bs.header_bits(),
        {name: 8 * len(bs.stream(name)) for name in STREAMS}, trace.ideal_bits(),
        estimate_bits(ckpt, prepared), float(cir(before, after)) if graph.directed else 1.0,
        seconds, lossless)


def _eval_worker(args):
    data, graph, preproc = args
    ckpt = _WORKER_CKPT.get(data)
    if ckpt is None:
        ckpt = checkpoint_from_bytes(data)
        _WORKER_CKPT.clear()
        _WORKER_CKPT[data] = ckpt
    return evaluate_graph(graph, ckpt, preproc)


_WORKER_CKPT: dict[bytes, Checkpoint] = {}


def evaluate(graphs: Sequence[SceneGraph], ckpt: Checkpoint, preproc: str | None = None,
             jobs: int = 1) -> list[GraphMetrics]:
    if jobs <= 1 or len(graphs) < 2:
        return [evaluate_graph(g, ckpt, preproc) for g in graphs]
    from concurrent.futures import ProcessPoolExecutor

    data = checkpoint_bytes(ckpt)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_eval_worker, [(data, g, preproc) for g in graphs], chunksize=4))


def deflate_ratio(graphs: Iterable[SceneGraph]) -> float:
    """zlib level 9 on the concatenated raw serializations, as a ratio of raw bits."""
    graphs = list(graphs)
    raw = b"".join(raw_bytes(g) for g in graphs)
    if not raw:
        return 0.0
    return 8 * len(zlib.compress(raw, 9)) / sum(raw_size_bits(g) for g in graphs)


def summarize(metrics: Sequence[GraphMetrics]) -> dict:
    """Aggregate ratio (sum of bits / sum of raw bits) plus means."""
    if not metrics:
        return {"graphs": 0}
    raw = sum(m.raw_bits for m in metrics)
    nodes = sum(m.num_nodes for m in metrics)
    out = {
        "graphs": len(metrics),
        "ratio": sum(m.total_bits for m in metrics) / raw,
        "mean_ratio": float(np.mean([m.compression_ratio for m in metrics])),
        "bits_per_node": sum(m.stream_bits["structure"] for m in metrics) / max(nodes, 1),
        "mean_total_bits": float(np.mean([m.total_bits for m in metrics])),
        "cir": float(np.mean([m.cir for m in metrics])),
        "lossless": all(m.lossless for m in metrics),
        "seconds": float(sum(m.seconds for m in metrics)),
    }
    for name in STREAMS:
        out[f"bits_{name}"] = sum(m.stream_bits[name] for m in metrics)
    return out
