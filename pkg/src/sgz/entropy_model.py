"""Probability models and their discretization to coder-precision tables.

Continuous families share one interface: ``cdf(z, dyn, channel)`` returns
the lower-tail value C, the upper-tail value S = 1 - C (each computed
accurately in its own tail) and a backward mapping dC -> (d dyn, d z).
``dyn`` is one row of dynamic parameters per symbol; static parameters,
when a family has them, live in a ParamStore and receive gradients directly.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import erfc, log_softmax, softmax

from .diff_core import ParamStore, Parameter, check_finite

__all__ = [
    "PRECISION",
    "TOTAL",
    "PROB_FLOOR",
    "DiscretePMF",
    "quantize",
    "categorical_pmf",
    "bernoulli_pmf",
    "uniform_pmf",
    "continuous_pmf",
    "Gaussian",
    "Laplacian",
    "GMM",
    "LearnedCDF",
    "FactorizedPrior",
    "make_family",
    "interval_bits",
    "categorical_bits",
    "factorized_prior_bits",
    "DISTRIBUTIONS",
]

PRECISION = 16
TOTAL = 1 << PRECISION
PROB_FLOOR = 1.0 / TOTAL
MASS_EPS = 1e-300
SIGMA_FLOOR = 1e-3
LN2 = math.log(2.0)
DISTRIBUTIONS = ("gaussian", "laplacian", "gmm5", "gmm10", "learned", "fulldyn")


class DiscretePMF:
    """Integer frequencies over symbols lo..lo+K-1 summing to TOTAL, each >= 1."""

    __slots__ = ("lo", "freqs", "cum")

    def __init__(self, lo: int, freqs: np.ndarray):
        freqs = np.asarray(freqs, dtype=np.int64)
        if freqs.ndim != 1 or freqs.size == 0:
            raise ValueError("PMF needs at least one symbol")
        if int(freqs.sum()) != TOTAL or int(freqs.min()) < 1:
            raise ValueError("PMF frequencies must be >= 1 and sum to 2^16")
        self.lo = int(lo)
        self.freqs = freqs
        self.cum = np.concatenate(([0], np.cumsum(freqs)))

    @property
    def hi(self) -> int:
        return self.lo + len(self.freqs) - 1

    def __len__(self) -> int:
        return len(self.freqs)

    def __eq__(self, other) -> bool:
        return (isinstance(other, DiscretePMF) and self.lo == other.lo
                and np.array_equal(self.freqs, other.freqs))

    def __hash__(self) -> int:
        return hash((self.lo, self.freqs.tobytes()))

    def __repr__(self) -> str:
        return f"DiscretePMF(lo={self.lo}, K={len(self)})"

    def bits(self, symbol: int) -> float:
        return PRECISION - math.log2(int(self.freqs[symbol - self.lo]))

    def probs(self) -> np.ndarray:
        return self.freqs / TOTAL


def _largest_remainder(values: np.ndarray, units: int) -> np.ndarray:
    """Indices of the ``units`` largest fractional parts, ties to the lowest index."""
    frac = values - np.floor(values)
    order = np.lexsort((np.arange(len(values)), -frac))
    return order[:units]


def quantize(probs: np.ndarray) -> np.ndarray:
    """Real probabilities -> integer frequencies (sum TOTAL, each >= 1).

    Largest-remainder rounding, then every zero is lifted to 1 by taking
    units from the other entries in proportion to their excess over 1.
    """
    p = np.asarray(probs, dtype=np.float64)
    k = len(p)
    if k > TOTAL:
        raise ValueError(f"{k} symbols do not fit in a 2^{PRECISION} table")
    check_finite(p, "quantize")
    p = np.maximum(p, 0.0)
    s = p.sum()
    p = p / s if s > 0 else np.full(k, 1.0 / k)
    raw = p * TOTAL
    f = np.floor(raw).astype(np.int64)
    f[_largest_remainder(raw, TOTAL - int(f.sum()))] += 1

    deficit = int((f == 0).sum())
    if deficit:
        spare = np.maximum(f - 1, 0)
        share = deficit * spare / spare.sum()
        take = np.floor(share).astype(np.int64)
        left = deficit - int(take.sum())
        if left:
            take[_largest_remainder(share, left)] += 1
        f = np.maximum(f - take, 1)
    return f


def categorical_pmf(logits: np.ndarray) -> DiscretePMF:
    logits = np.asarray(logits, dtype=np.float64)
    check_finite(logits, "categorical_pmf")
    return DiscretePMF(0, quantize(softmax(logits)))


def bernoulli_pmf(p: float) -> DiscretePMF:
    """PMF over {0, 1} where ``p`` is the probability of 1."""
    f0 = int(round((1.0 - float(p)) * TOTAL))
    f0 = min(max(f0, 1), TOTAL - 1)
    return DiscretePMF(0, np.array([f0, TOTAL - f0]))


def uniform_pmf(lo: int, hi: int) -> DiscretePMF:
    return DiscretePMF(lo, quantize(np.ones(hi - lo + 1)))


CdfFn = Callable[[np.ndarray], np.ndarray]


def continuous_pmf(cdf: CdfFn, lo: int, hi: int, scale: float = 1.0,
                   offset: float = 0.0) -> DiscretePMF:
    """Discretize a CDF over integers lo..hi, tails folded into the end bins.

    ``cdf`` is evaluated at ``scale * (x +- 0.5) + offset``.
    """
    if hi < lo:
        raise ValueError("empty symbol range")
    edges = scale * (np.arange(lo, hi, dtype=np.float64) + 0.5) + offset
    c = np.asarray(cdf(edges), dtype=np.float64) if len(edges) else np.zeros(0)
    probs = np.diff(np.concatenate(([0.0], c, [1.0])))
    return DiscretePMF(lo, quantize(np.maximum(probs, 0.0)))


# --- parametric families --------------------------------------------------

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


class Gaussian:
    """dyn = (mu, raw_sigma); sigma = softplus(raw) + floor."""

    name = "gaussian"
    n_params = 2

    def param_init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.array([0.0, _inv_softplus(1.0)])

    @staticmethod
    def _lower(t):
        return 0.5 * erfc(-t / _SQRT2)

    @staticmethod
    def _pdf(t):
        return _INV_SQRT2PI * np.exp(-0.5 * t * t)

    def cdf(self, z: np.ndarray, dyn: np.ndarray, channel: np.ndarray | None = None):
        mu = dyn[:, :1]
        raw = dyn[:, 1:2]
        sigma = _softplus(raw) + SIGMA_FLOOR
        t = (z - mu) / sigma
        c, s = self._lower(t), self._lower(-t)

        def backward(dc: np.ndarray) -> np.ndarray:
            g = dc * self._pdf(t) / sigma
            dmu = -g.sum(axis=1, keepdims=True)
            dsig = -(g * t).sum(axis=1, keepdims=True)
            return np.concatenate([dmu, dsig * _sigmoid(raw)], axis=1), g

        return c, s, backward


class Laplacian(Gaussian):
    name = "laplacian"

    @staticmethod
    def _lower(t):
        e = 0.5 * np.exp(-np.abs(t))
        return np.where(t < 0, e, 1.0 - e)

    @staticmethod
    def _pdf(t):
        return 0.5 * np.exp(-np.abs(t))


class GMM:
    """K-component Gaussian mixture: dyn = (K logits, K means, K raw scales)."""

    def __init__(self, k: int):
        self.k = k
        self.name = f"gmm{k}"
        self.n_params = 3 * k

    def param_init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng or np.random.default_rng(0)
        means = np.linspace(-1.0, 1.0, self.k) if self.k > 1 else np.zeros(1)
        return np.concatenate([np.zeros(self.k), means, np.full(self.k, _inv_softplus(1.0))])

    def cdf(self, z: np.ndarray, dyn: np.ndarray, channel: np.ndarray | None = None):
        k = self.k
        w = softmax(dyn[:, :k], axis=1)[:, None, :]  # (B,1,K)
        mu = dyn[:, None, k:2 * k]
        raw = dyn[:, None, 2 * k:]
        sigma = _softplus(raw) + SIGMA_FLOOR
        t = (z[:, :, None] - mu) / sigma  # (B,M,K)
        ck = Gaussian._lower(t)
        c = (w * ck).sum(axis=2)
        s = (w * Gaussian._lower(-t)).sum(axis=2)

        def backward(dc: np.ndarray) -> np.ndarray:
            d = dc[:, :, None]
            dlogit = (d * w * (ck - c[:, :, None])).sum(axis=1)
            g = d * w * Gaussian._pdf(t) / sigma
            dmu = -g.sum(axis=1)
            dsig = -(g * t).sum(axis=1)
            dz = g.sum(axis=2)
            return np.concatenate([dlogit, dmu, dsig * _sigmoid(raw[:, 0, :])], axis=1), dz

        return c, s, backward


class LearnedCDF:
    """Monotone CDF network: a chain of stages h -> softplus(W) h + b, h += tanh(a) tanh(h).

    The first ``len(static_dims) - 1`` stages are static (one parameter set per
    channel, stored in ``store``); the remaining stages take their parameters
    from the per-symbol ``dyn`` rows.  A final sigmoid maps to (0, 1).
    """

    def __init__(self, store: ParamStore | None, prefix: str, channels: int,
                 dims: tuple[int, ...], n_static: int, init_scale: float,
                 rng: np.random.Generator, name: str = "learned"):
        if dims[0] != 1 or dims[-1] != 1:
            raise ValueError("CDF network must map scalars to scalars")
        self.name = name
        self.dims = dims
        self.n_static = n_static
        self.channels = channels
        n_stages = len(dims) - 1
        scale = init_scale ** (1.0 / n_stages)
        self._init = []
        for k in range(n_stages):
            i, o = dims[k], dims[k + 1]
            self._init.append((np.full((o, i), _inv_softplus(1.0 / scale / o)),
                               rng.uniform(-0.5, 0.5, size=o), np.zeros(o)))
        self.static: list[tuple[Parameter, Parameter, Parameter]] = []
        for k in range(n_static):
            w0, b0, a0 = self._init[k]
            self.static.append((
                store.add(f"{prefix}.s{k}.w", np.tile(w0, (channels, 1, 1))),
                store.add(f"{prefix}.s{k}.b", np.tile(b0, (channels, 1))),
                store.add(f"{prefix}.s{k}.a", np.tile(a0, (channels, 1))),
            ))
        self.dyn_shapes = [(dims[k + 1], dims[k]) for k in range(n_static, n_stages)]
        self.n_params = sum(o * i + 2 * o for o, i in self.dyn_shapes)

    def param_init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        parts = []
        for w0, b0, a0 in self._init[self.n_static:]:
            parts += [w0.ravel(), b0, a0]
        return np.concatenate(parts) if parts else np.zeros(0)

    def _split(self, dyn: np.ndarray):
        out, pos = [], 0
        for o, i in self.dyn_shapes:
            w = dyn[:, pos:pos + o * i].reshape(-1, o, i)
            pos += o * i
            out.append((w, dyn[:, pos:pos + o], dyn[:, pos + o:pos + 2 * o]))
            pos += 2 * o
        return out

    @staticmethod
    def _stage(h, w_raw, b, a_raw):
        """Per-row stage.  h (B,M,i); w_raw (B,o,i); b, a_raw (B,o)."""
        w = _softplus(w_raw)
        z = np.einsum("bmi,boi->bmo", h, w) + b[:, None, :]
        g = np.tanh(a_raw)[:, None, :]
        tz = np.tanh(z)
        out = z + g * tz

        def backward(dout):
            dz = dout * (1.0 + g * (1.0 - tz * tz))
            da = (dout * tz).sum(axis=1) * (1.0 - g[:, 0, :] ** 2)
            db = dz.sum(axis=1)
            dw = np.einsum("bmo,bmi->boi", dz, h) * _sigmoid(w_raw)
            dh = np.einsum("bmo,boi->bmi", dz, w)
            return dh, dw, db, da

        return out, backward

    def logits(self, z: np.ndarray, dyn: np.ndarray | None, channel: np.ndarray | None):
        """Pre-sigmoid output at points z (B,M).  Returns (l, backward(dl) -> (ddyn, dz))."""
        z = np.asarray(z, dtype=np.float64)
        bsz = z.shape[0]
        ch = np.zeros(bsz, dtype=np.int64) if channel is None else np.asarray(channel)
        h = z[:, :, None]
        backs = []
        for w, b, a in self.static:
            h, back = self._stage(h, w.value[ch], b.value[ch], a.value[ch])
            backs.append(("s", (w, b, a), back))
        if self.dyn_shapes:
            for w, b, a in self._split(dyn):
                h, back = self._stage(h, w, b, a)
                backs.append(("d", None, back))
        l = h[:, :, 0]

        def backward(dl: np.ndarray) -> np.ndarray:
            dh = dl[:, :, None]
            ddyn = []
            for kind, params, back in reversed(backs):
                dh, dw, db, da = back(dh)
                if kind == "s":
                    w, b, a = params
                    np.add.at(w.grad, ch, dw)
                    np.add.at(b.grad, ch, db)
                    np.add.at(a.grad, ch, da)
                else:
                    ddyn.append(np.concatenate([dw.reshape(bsz, -1), db, da], axis=1))
            dz = dh[:, :, 0]
            if not ddyn:
                return np.zeros((bsz, 0)), dz
            return np.concatenate(ddyn[::-1], axis=1), dz

        return l, backward

    def cdf(self, z: np.ndarray, dyn: np.ndarray | None, channel: np.ndarray | None = None):
        l, back = self.logits(z, dyn, channel)
        c, s = _sigmoid(l), _sigmoid(-l)
        return c, s, lambda dc: back(dc * c * s)


class FactorizedPrior(LearnedCDF):
    """Fully static density per latent channel, on the raw integer grid."""

    def __init__(self, store: ParamStore, prefix: str, channels: int,
                 rng: np.random.Generator, hidden: tuple[int, ...] = (3, 3, 3),
                 init_scale: float = 10.0):
        dims = (1,) + tuple(hidden) + (1,)
        super().__init__(store, prefix, channels, dims, len(dims) - 1, init_scale, rng,
                         name="factorized")


def make_family(name: str, store: ParamStore, prefix: str, channels: int,
                rng: np.random.Generator, init_scale: float = 4.0):
    """Continuous family by CLI name."""
    if name == "gaussian":
        return Gaussian()
    if name == "laplacian":
        return Laplacian()
    if name.startswith("gmm"):
        return GMM(int(name[3:]))
    if name == "learned":
        return LearnedCDF(store, prefix, channels, (1, 3, 3, 3, 1), 2, init_scale, rng, "learned")
    if name == "fulldyn":
        return LearnedCDF(store, prefix, channels, (1, 3, 1), 0, init_scale, rng, "fulldyn")
    raise ValueError(f"unknown distribution {name!r}")


# --- likelihoods ----------------------------------------------------------


def interval_bits(family, z_low: np.ndarray, z_up: np.ndarray, open_low: np.ndarray,
                  open_up: np.ndarray, dyn: np.ndarray | None,
                  channel: np.ndarray | None = None):
    """-log2 of the mass on [z_low, z_up] per row, open ends extend to infinity.

    Mass is clamped at a tiny floor only to keep the logarithm finite; the
    gradient is exact (zero where clamped).
    Returns (bits (B,), backward(dbits) -> (ddyn, dz_low, dz_up)).
    """
    open_low = np.asarray(open_low, dtype=bool)
    open_up = np.asarray(open_up, dtype=bool)
    z = np.stack([np.where(open_low, 0.0, z_low), np.where(open_up, 0.0, z_up)], axis=1)
    c, s, back = family.cdf(z, dyn, channel)
    c_low = np.where(open_low, 0.0, c[:, 0])
    s_low = np.where(open_low, 1.0, s[:, 0])
    c_up = np.where(open_up, 1.0, c[:, 1])
    s_up = np.where(open_up, 0.0, s[:, 1])
    upper_tail = (c_low + c_up) > 1.0
    mass = np.where(upper_tail, s_low - s_up, c_up - c_low)
    floored = np.maximum(mass, MASS_EPS)
    bits = -np.log2(floored)

    def backward(dbits: np.ndarray) -> np.ndarray:
        dmass = np.where(mass > MASS_EPS, -dbits / (floored * LN2), 0.0)
        dc = np.stack([np.where(open_low, 0.0, -dmass), np.where(open_up, 0.0, dmass)], axis=1)
        ddyn, dz = back(dc)
        return ddyn, dz[:, 0], dz[:, 1]

    return bits, backward


def categorical_bits(logits: np.ndarray, target: np.ndarray):
    """Exact cross-entropy in bits per row; backward maps dbits -> dlogits."""
    lsm = log_softmax(logits, axis=1)
    rows = np.arange(len(target))
    bits = -lsm[rows, target] / LN2

    def backward(dbits: np.ndarray) -> np.ndarray:
        g = np.exp(lsm)
        g[rows, target] -= 1.0
        return g * (dbits / LN2)[:, None]

    return bits, backward


def factorized_prior_bits(latents: np.ndarray, prior: FactorizedPrior, bound: int) -> float:
    """Ideal bits of integer latents (N x C) under the prior with tails folded at +-bound."""
    y = np.asarray(latents, dtype=np.float64)
    if y.size == 0:
        return 0.0
    ch = np.tile(np.arange(y.shape[1]), y.shape[0])
    flat = y.reshape(-1)
    bits, _ = interval_bits(prior, flat - 0.5, flat + 0.5, flat <= -bound, flat >= bound, None, ch)
    return float(bits.sum())
