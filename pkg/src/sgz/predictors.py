"""Unified prior extractor plus the structure, node and edge predictors.

All sub-models are plain functions of numpy arrays returning
``(output, backward)`` pairs, so the same code serves batched training
(many graphs packed block-diagonally) and the symbol-by-symbol codec, which
calls them on a single graph with everything not yet decoded zeroed out.
Causal masks guarantee that row i only sees rows < i, which is what makes
the two uses agree.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .diff_core import (ParamStore, causal_mask, chain, context_operator, fc, gcc_aggregate,
                        relu, rgcn_aggregate)
from .edge_graph import edge_graph_adjacency
from .entropy_model import (DISTRIBUTIONS, DiscretePMF, FactorizedPrior, LN2,
                            categorical_bits, continuous_pmf, interval_bits, make_family)
from .graph_model import SceneGraph, to_adjacency

__all__ = [
    "CONTEXTS",
    "ORDERS",
    "PredictorConfig",
    "Batch",
    "SceneGraphModel",
    "node_features",
    "onehot",
    "structure_schedule",
    "location_ranges",
]

CONTEXTS = ("node", "structure", "edge")
ORDERS = ("edge-first", "node-first", "parallel")
WEIGHT_LEVELS = 256
COORD_SCALE = 8.0  # standardized location z = 8 v / S - 4 spans [-4, 4]


@dataclass(frozen=True)
class PredictorConfig:
    num_object_types: int
    num_relation_types: int
    weights: bool = False
    order: str = "edge-first"
    dist: str = "learned"
    context: tuple[str, ...] = CONTEXTS
    hidden: int = 128
    prior_features: int = 16
    latent_channels: int = 2
    struct_dim: int = 8
    latent_bound: int = 32
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(c for c in CONTEXTS if c in self.context))
        if self.order not in ORDERS:
            raise ValueError(f"unknown order {self.order!r}")
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.dist!r}")
        if self.num_object_types < 1 or self.num_relation_types < 1:
            raise ValueError("vocabularies must be non-empty")

    def uses(self, context: str) -> bool:
        return context in self.context

    def to_dict(self) -> dict:
        d = asdict(self)
        d["context"] = list(self.context)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        d = dict(d)
        d["context"] = tuple(d.get("context", CONTEXTS))
        return cls(**d)


def onehot(idx: np.ndarray, k: int) -> np.ndarray:
    """Rows of the identity; negative indices give zero rows."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((len(idx), k))
    ok = idx >= 0
    out[np.flatnonzero(ok), idx[ok]] = 1.0
    return out


def node_features(types: np.ndarray, boxes: np.ndarray, sizes: np.ndarray,
                  num_types: int, known: np.ndarray | None = None) -> np.ndarray:
    """[one-hot type, x/W, y/H, w/W, h/H, 1] per node; unknown rows are zero."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    sizes = np.asarray(sizes, dtype=np.float64).reshape(-1, 2)
    scale = np.concatenate([sizes, sizes], axis=1)
    x = np.concatenate([onehot(types, num_types), boxes / scale, np.ones((len(boxes), 1))], axis=1)
    if known is not None:
        x[~np.asarray(known, dtype=bool)] = 0.0
    return x


def location_ranges(box: Sequence[int], size: Sequence[int]) -> list[tuple[int, int, int]]:
    """(lo, hi, S) for x, y, w, h; w and h ranges depend on the already coded x, y."""
    width, height = size
    x, y = box[0], box[1]
    return [(0, width - 1, width), (0, height - 1, height),
            (1, width - x, width), (1, height - y, height)]


def structure_schedule(n: int, directed: bool = True) -> list[tuple[int, int]]:
    """Column sweep: for j, entries (i, j) for i < j, then (j, i) for i < j."""
    out = []
    for j in range(n):
        out.extend((i, j) for i in range(j))
        if directed:
            out.extend((j, i) for i in range(j))
    return out


# --- batches ---------------------------------------------------------------


@dataclass
class Batch:
    """Graphs packed into one block-diagonal problem."""

    graphs: list[SceneGraph]
    num_types: int
    num_rel: int
    node_graph: np.ndarray = field(init=False)
    types: np.ndarray = field(init=False)
    boxes: np.ndarray = field(init=False)
    sizes: np.ndarray = field(init=False)
    x_nd: np.ndarray = field(init=False)
    adj: np.ndarray = field(init=False)
    rel: np.ndarray = field(init=False)
    struct_mask: np.ndarray = field(init=False)
    esrc: np.ndarray = field(init=False)
    edst: np.ndarray = field(init=False)
    erel: np.ndarray = field(init=False)
    ewt: np.ndarray | None = field(init=False)
    edge_graph: np.ndarray = field(init=False)

    def __post_init__(self):
        sizes_n = [g.num_nodes for g in self.graphs]
        n = sum(sizes_n)
        offsets = np.concatenate(([0], np.cumsum(sizes_n)))
        self.node_graph = np.repeat(np.arange(len(self.graphs)), sizes_n)
        self.types = np.array([nd.type_id for g in self.graphs for nd in g.nodes], dtype=np.int64)
        self.boxes = np.array([nd.box for g in self.graphs for nd in g.nodes],
                              dtype=np.int64).reshape(n, 4)
        self.sizes = np.array([g.image_size for g in self.graphs for _ in g.nodes],
                              dtype=np.int64).reshape(n, 2)
        self.x_nd = node_features(self.types, self.boxes, self.sizes, self.num_types)
        self.adj = np.zeros((n, n), dtype=np.uint8)
        self.rel = np.full((n, n), -1, dtype=np.int64)
        self.struct_mask = np.zeros((n, n), dtype=bool)
        src, dst, rel, wt = [], [], [], []
        weighted = any(g.has_weights for g in self.graphs)
        for k, g in enumerate(self.graphs):
            o, m = offsets[k], sizes_n[k]
            self.adj[o:o + m, o:o + m] = to_adjacency(g)
            block = ~np.eye(m, dtype=bool)
            if not g.directed:
                block = np.triu(block, 1)
            self.struct_mask[o:o + m, o:o + m] = block
            for e in sorted(g.edges, key=lambda e: (e.src, e.dst)):
                s, d = o + e.src, o + e.dst
                self.rel[s, d] = e.rel_id
                if not g.directed:
                    self.rel[d, s] = e.rel_id
                src.append(s)
                dst.append(d)
                rel.append(e.rel_id)
                wt.append(e.weight if e.weight is not None else 0)
        self.esrc = np.array(src, dtype=np.int64)
        self.edst = np.array(dst, dtype=np.int64)
        self.erel = np.array(rel, dtype=np.int64)
        self.ewt = np.array(wt, dtype=np.int64) if weighted else None
        self.edge_graph = edge_graph_adjacency(self.esrc, self.edst)

    @property
    def n(self) -> int:
        return len(self.types)

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    def node_counts(self) -> np.ndarray:
        return np.array([g.num_nodes for g in self.graphs], dtype=np.float64)


def _mlp(x: np.ndarray, layers, act_last: bool = False):
    backs = []
    for k, (w, b) in enumerate(layers):
        x, back = fc(x, w, b)
        backs.append(back)
        if act_last or k < len(layers) - 1:
            x, back = relu(x)
            backs.append(back)
    return x, chain(backs)


def _pairs(dims: Sequence[int]):
    return list(zip(dims[:-1], dims[1:]))


def _gather_rows_back(grad_rows: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, grad_rows.shape[1]))
    np.add.at(out, index, grad_rows)
    return out


def _bernoulli_bits(logits: np.ndarray, target: np.ndarray):
    """Bits of binary targets under sigmoid(logits)."""
    sgn = np.where(target, 1.0, -1.0)
    ls = sgn * logits
    bits = np.logaddexp(0.0, -ls) / LN2

    def backward(dbits):
        return dbits * sgn * -(0.5 * (1.0 - np.tanh(0.5 * ls))) / LN2

    return bits, backward


class SceneGraphModel:
    def __init__(self, cfg: PredictorConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        st = self.params = ParamStore()
        t_o, t_r = cfg.num_object_types, cfg.num_relation_types
        fin = t_o + 5
        h, f, c, d = cfg.hidden, cfg.prior_features, cfg.latent_channels, cfg.struct_dim

        def stack(name, dims):
            return [st.dense(f"{name}{k}", a, b, rng) for k, (a, b) in enumerate(_pairs(dims))]

        self.enc = stack("prior.enc", [fin, h, h, h, c])
        self.dec = stack("prior.dec", [c, h, h, h, f])
        self.density = FactorizedPrior(st, "prior.density", c, rng)

        self.s_out = stack("struct.out", [f, h, d])
        self.s_pin = stack("struct.pin", [f, h, d])
        self.s_kernel = st.add("struct.gcc", rng.normal(0, np.sqrt(2.0 / f), (f, h)))
        self.s_ctx = stack("struct.ctx", [h + f, h, d])
        self.s_bias = st.add("struct.bias", np.array([-2.0, -2.0]))  # upper, lower

        if cfg.order == "edge-first":
            self.n_kernel = st.add("node.rgcn", rng.normal(0, np.sqrt(2.0 / fin), (t_r, fin, h)))
        else:
            self.n_kernel = st.add("node.gcc", rng.normal(0, np.sqrt(2.0 / fin), (fin, h)))
        self.n_ctx = stack("node.ctx", [h, h, h, h])
        self.n_pri = stack("node.pri", [f, h, h])
        self.n_merge = stack("node.merge", [2 * h, h, h])
        self.n_type = stack("node.type", [h, t_o])
        self.family = make_family(cfg.dist, st, "node.cdf", 4, rng)
        p = self.family.n_params
        self.n_loc = stack("node.loc", [h + t_o, h, 4 * p])
        w_last, b_last = self.n_loc[-1]
        w_last.value *= 0.01
        b_last.value[:] = np.tile(self.family.param_init(rng), 4)

        v = fin if cfg.order == "node-first" else f
        e_in = 2 * v + t_r + (1 if cfg.weights else 0)
        self.e_kernel = st.add("edge.gcc", rng.normal(0, np.sqrt(2.0 / e_in), (e_in, h)))
        self.e_ctx = stack("edge.ctx", [h, h, h, h])
        e_self = 2 * f + (2 * fin if cfg.order == "node-first" else 0)
        self.e_self = stack("edge.self", [e_self, h, h])
        self.e_merge = stack("edge.merge", [2 * h, h, h])
        self.e_rel = stack("edge.rel", [h, t_r])
        self.e_wt = stack("edge.wt", [h + t_r, h, WEIGHT_LEVELS]) if cfg.weights else []
        self._prior_pmfs: list[DiscretePMF] | None = None

    # --- unified prior -------------------------------------------------

    def prior_encode(self, x_nd: np.ndarray):
        return _mlp(x_nd, self.enc)

    def round_latents(self, y_cont: np.ndarray) -> np.ndarray:
        b = self.cfg.latent_bound
        return np.clip(np.rint(y_cont), -b, b).astype(np.int64)

    def prior_decode(self, y: np.ndarray):
        return _mlp(np.asarray(y, dtype=np.float64), self.dec)

    def prior_pmfs(self) -> list[DiscretePMF]:
        """Per-channel latent PMFs over [-bound, bound] (symbol-independent, so cached)."""
        if self._prior_pmfs is None:
            b = self.cfg.latent_bound
            self._prior_pmfs = [
                continuous_pmf(lambda z, ch=ch: self.density.cdf(z[None], None, np.array([ch]))[0][0],
                               -b, b)
                for ch in range(self.cfg.latent_channels)
            ]
        return self._prior_pmfs

    def invalidate(self) -> None:
        self._prior_pmfs = None

    def latent_bits(self, y: np.ndarray, rounded: bool):
        """Bits of latents (N x C) under the factorized prior; backward gives d y."""
        n, c = y.shape
        flat = y.reshape(-1)
        ch = np.tile(np.arange(c), n)
        b = self.cfg.latent_bound
        open_low = (flat <= -b) if rounded else np.zeros(flat.shape, dtype=bool)
        open_up = (flat >= b) if rounded else np.zeros(flat.shape, dtype=bool)
        bits, back = interval_bits(self.density, flat - 0.5, flat + 0.5, open_low, open_up, None, ch)

        def backward(dbits):
            _, dz_low, dz_up = back(dbits.reshape(-1))
            return (dz_low + dz_up).reshape(n, c)

        return bits.reshape(n, c), backward

    # --- structure -----------------------------------------------------

    def structure_static(self, r: np.ndarray):
        """Node-out and pseudo node-in latents, both from the prior rows only."""
        out_emb, b_o = _mlp(r, self.s_out)
        in_emb, b_p = _mlp(r, self.s_pin)
        return out_emb, in_emb, lambda d_out, d_in: b_o(d_out) + b_p(d_in)

    def structure_context(self, r: np.ndarray, adj: np.ndarray):
        """Context embeddings from causal in-edges; row i depends on adjacency columns <= i only."""
        n = len(r)
        h = self.cfg.hidden
        if self.cfg.uses("structure") and n:
            op = context_operator(causal_mask(adj), degree="in")
            g, b_g = gcc_aggregate(r, adj, self.s_kernel, op=op)
            g, b_r = relu(g)
        else:
            g, b_g, b_r = np.zeros((n, h)), None, None
        ctx_emb, b_c = _mlp(np.concatenate([g, r], axis=1), self.s_ctx)

        def backward(d_ctx):
            dcat = b_c(d_ctx)
            dr = dcat[:, h:].copy()
            if b_g is not None:
                dr += b_g(b_r(dcat[:, :h]))
            return dr

        return ctx_emb, backward

    def structure_logits(self, out_emb, in_emb, ctx_emb):
        """Logit of edge s -> d: context path for s < d, prior path otherwise."""
        n = len(out_emb)
        upper = np.triu(np.ones((n, n), dtype=bool), 1)
        bu, bl = self.s_bias.value
        logits = np.where(upper, ctx_emb @ in_emb.T + bu, out_emb @ in_emb.T + bl)

        def backward(dl):
            du = np.where(upper, dl, 0.0)
            dlo = dl - du
            self.s_bias.grad += np.array([du.sum(), dlo.sum()])
            d_ctx = du @ in_emb
            d_out = dlo @ in_emb
            d_in = du.T @ ctx_emb + dlo.T @ out_emb
            return d_out, d_in, d_ctx

        return logits, backward

    def edge_probability(self, out_emb, in_emb, ctx_emb, s: int, d: int) -> float:
        bu, bl = self.s_bias.value
        logit = (ctx_emb[s] @ in_emb[d] + bu) if s < d else (out_emb[s] @ in_emb[d] + bl)
        return float(0.5 * (1.0 + np.tanh(0.5 * logit)))

    # --- node data -----------------------------------------------------

    def node_forward(self, x_nd: np.ndarray, adj: np.ndarray, rel: np.ndarray, r: np.ndarray):
        """Type logits and merged features; x_nd rows >= i never reach row i."""
        n = len(r)
        h = self.cfg.hidden
        if self.cfg.uses("node") and n:
            if self.cfg.order == "edge-first":
                g, b_g = rgcn_aggregate(x_nd, adj, rel, self.n_kernel)
            else:
                g, b_g = gcc_aggregate(x_nd, adj, self.n_kernel)
            g, b_r = relu(g)
            ctx, b_c = _mlp(g, self.n_ctx, act_last=True)
        else:
            ctx, b_c = np.zeros((n, h)), None
        pri, b_p = _mlp(r, self.n_pri, act_last=True)
        m, b_m = _mlp(np.concatenate([ctx, pri], axis=1), self.n_merge, act_last=True)
        logits, b_t = _mlp(m, self.n_type)

        def backward(dlogits, dm):
            dcat = b_m(b_t(dlogits) + dm)
            if b_c is not None:
                b_g(b_r(b_c(dcat[:, :h])))  # parameter grads only; x_nd is data
            return b_p(dcat[:, h:])

        return logits, m, backward

    def location_params(self, m: np.ndarray, types: np.ndarray):
        """Per-node distribution parameters, shape (N, 4, P), conditioned on the node's type."""
        inp = np.concatenate([m, onehot(types, self.cfg.num_object_types)], axis=1)
        out, back = _mlp(inp, self.n_loc)
        p = self.family.n_params
        h = self.cfg.hidden
        return out.reshape(len(m), 4, p), lambda d: back(d.reshape(len(m), 4 * p))[:, :h]

    def location_bits(self, dyn: np.ndarray, boxes: np.ndarray, sizes: np.ndarray):
        boxes = np.asarray(boxes, dtype=np.int64)
        width, height = sizes[:, 0], sizes[:, 1]
        x, y = boxes[:, 0], boxes[:, 1]
        scale = np.stack([width, height, width, height], axis=1).astype(np.float64)
        lo = np.broadcast_to(np.array([0, 0, 1, 1]), boxes.shape)
        hi = np.stack([width - 1, height - 1, width - x, height - y], axis=1)
        k = COORD_SCALE / scale
        z_low = (k * (boxes - 0.5) - 4.0).reshape(-1)
        z_up = (k * (boxes + 0.5) - 4.0).reshape(-1)
        n = len(boxes)
        ch = np.tile(np.arange(4), n)
        bits, back = interval_bits(self.family, z_low, z_up, (boxes == lo).reshape(-1),
                                   (boxes == hi).reshape(-1), dyn.reshape(n * 4, -1), ch)
        return bits.reshape(n, 4), lambda d: back(d.reshape(-1))[0].reshape(dyn.shape)

    def location_pmf(self, param_row: np.ndarray, coord: int, lo: int, hi: int,
                     size: int) -> DiscretePMF:
        ch = np.array([coord])
        dy_row = param_row[None, :]
        return continuous_pmf(lambda z: self.family.cdf(z[None], dy_row, ch)[0][0], lo, hi,
                              scale=COORD_SCALE / size, offset=-4.0)

    # --- edge data -----------------------------------------------------

    def edge_forward(self, r: np.ndarray, x_nd: np.ndarray, esrc: np.ndarray, edst: np.ndarray,
                     erel: np.ndarray, ewt: np.ndarray | None, eadj: np.ndarray):
        """Relation logits and merged features per edge (in edge order).

        ``erel`` / ``ewt`` entries of not-yet-coded edges must be -1 / ignored;
        they only enter as context for later edges.
        """
        cfg = self.cfg
        n, e, h = len(r), len(esrc), cfg.hidden
        node_first = cfg.order == "node-first"
        f = r.shape[1]
        if cfg.uses("edge") and e:
            v = x_nd if node_first else r
            parts = [v[esrc], v[edst], onehot(erel, cfg.num_relation_types)]
            if cfg.weights:
                # unweighted graphs under a weighted model see weight 0 everywhere
                wt = np.zeros(e) if ewt is None else np.asarray(ewt, dtype=np.float64)
                w = np.where(erel >= 0, wt / 255.0, 0.0)
                parts.append(w[:, None])
            feat = np.concatenate(parts, axis=1)
            g, b_g = gcc_aggregate(feat, eadj, self.e_kernel)
            g, b_r = relu(g)
            ctx, b_c = _mlp(g, self.e_ctx, act_last=True)
        else:
            ctx, b_c = np.zeros((e, h)), None
        self_parts = [r[esrc], r[edst]] + ([x_nd[esrc], x_nd[edst]] if node_first else [])
        pri, b_p = _mlp(np.concatenate(self_parts, axis=1), self.e_self, act_last=True)
        m, b_m = _mlp(np.concatenate([ctx, pri], axis=1), self.e_merge, act_last=True)
        logits, b_l = _mlp(m, self.e_rel)

        def backward(dlogits, dm):
            dcat = b_m(b_l(dlogits) + dm)
            dpri = b_p(dcat[:, h:])
            dr = _gather_rows_back(dpri[:, :f], esrc, n) + _gather_rows_back(dpri[:, f:2 * f], edst, n)
            if b_c is not None:
                dfeat = b_g(b_r(b_c(dcat[:, :h])))
                if not node_first:
                    dr += _gather_rows_back(dfeat[:, :f], esrc, n)
                    dr += _gather_rows_back(dfeat[:, f:2 * f], edst, n)
            return dr

        return logits, m, backward

    def weight_logits(self, m: np.ndarray, erel: np.ndarray):
        inp = np.concatenate([m, onehot(erel, self.cfg.num_relation_types)], axis=1)
        out, back = _mlp(inp, self.e_wt)
        h = self.cfg.hidden
        return out, lambda d: back(d)[:, :h]

    # --- loss ----------------------------------------------------------

    def graph_loss(self, batch: Batch, rng: np.random.Generator | None = None,
                   train: bool = True):
        """Mean over graphs of (total bits / N).  Returns (loss, per-graph stream bits, backward).

        With ``train`` the latents get additive U(-0.5, 0.5) noise (``rng``
        required); otherwise they are rounded exactly as the codec does.
        """
        cfg = self.cfg
        n = batch.n
        if n == 0:
            raise ValueError("graph_loss needs at least one node")
        counts = batch.node_counts()
        gw = 1.0 / (counts * batch.num_graphs)  # per-graph symbol weight
        ng = batch.num_graphs

        y_cont, b_enc = self.prior_encode(batch.x_nd)
        if train:
            y = y_cont + rng.uniform(-0.5, 0.5, size=y_cont.shape)
        else:
            y = self.round_latents(y_cont).astype(np.float64)
        pbits, b_pbits = self.latent_bits(y, rounded=not train)
        r, b_dec = self.prior_decode(y)

        out_emb, in_emb, b_stat = self.structure_static(r)
        ctx_emb, b_ctx = self.structure_context(r, batch.adj)
        slog, b_slog = self.structure_logits(out_emb, in_emb, ctx_emb)
        sbits, b_sbits = _bernoulli_bits(slog, batch.adj != 0)
        sbits = np.where(batch.struct_mask, sbits, 0.0)

        tlog, m, b_node = self.node_forward(batch.x_nd, batch.adj, batch.rel, r)
        tbits, b_tbits = categorical_bits(tlog, batch.types)
        dyn, b_dyn = self.location_params(m, batch.types)
        lbits, b_lbits = self.location_bits(dyn, batch.boxes, batch.sizes)

        e = len(batch.esrc)
        egraph = batch.node_graph[batch.esrc] if e else np.zeros(0, dtype=np.int64)
        if e:
            rlog, em, b_edge = self.edge_forward(r, batch.x_nd, batch.esrc, batch.edst, batch.erel,
                                                 batch.ewt, batch.edge_graph)
            rbits, b_rbits = categorical_bits(rlog, batch.erel)
            if cfg.weights and batch.ewt is not None:
                wlog, b_wlog = self.weight_logits(em, batch.erel)
                wbits, b_wbits = categorical_bits(wlog, batch.ewt)
            else:
                wbits = np.zeros(e)
        else:
            rbits = wbits = np.zeros(0)

        node_g = batch.node_graph
        per = {
            "prior": np.bincount(node_g, pbits.sum(axis=1), ng),
            "structure": np.bincount(node_g, sbits.sum(axis=1), ng),
            "node_type": np.bincount(node_g, tbits, ng),
            "node_loc": np.bincount(node_g, lbits.sum(axis=1), ng),
            "rel_type": np.bincount(egraph, rbits, ng),
            "rel_weight": np.bincount(egraph, wbits, ng),
        }
        total = sum(per.values())
        loss = float((total * gw).sum())

        def backward() -> None:
            wn = gw[node_g]
            # structure
            dsb = np.where(batch.struct_mask, wn[:, None], 0.0)
            d_out, d_in, d_ctx = b_slog(b_sbits(dsb))
            dr = b_stat(d_out, d_in) + b_ctx(d_ctx)
            # node data
            dm = b_dyn(b_lbits(np.repeat(wn[:, None], 4, axis=1)))
            dr += b_node(b_tbits(wn), dm)
            # edge data
            if e:
                we = gw[egraph]
                dem = np.zeros_like(em)
                if cfg.weights and batch.ewt is not None:
                    dem += b_wlog(b_wbits(we))
                dr += b_edge(b_rbits(we), dem)
            dy = b_dec(dr) + b_pbits(np.repeat(wn[:, None], y.shape[1], axis=1))
            b_enc(dy)

        return loss, per, backward
