"""Small float64 differentiable kernel with hand-written backward passes.

Every op returns ``(output, backward)``.  ``backward(d_out)`` returns the
gradient with respect to the op's tensor input and accumulates parameter
gradients into ``Parameter.grad``.  Parameters are plain numpy arrays
wrapped with Adam state; there is no global tape.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "NonFiniteError",
    "Parameter",
    "ParamStore",
    "check_finite",
    "fc",
    "relu",
    "sigmoid",
    "tanh",
    "softplus",
    "chain",
    "causal_mask",
    "context_operator",
    "gcc_aggregate",
    "rgcn_aggregate",
    "grad_check",
    "adam_step",
]

Backward = Callable[[np.ndarray], np.ndarray]


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values entering {where}")


class Parameter:
    """Trainable array plus Adam moments."""

    __slots__ = ("value", "grad", "m", "v", "t")

    def __init__(self, value: np.ndarray):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


class ParamStore(OrderedDict):
    """Ordered name -> Parameter map; insertion order is the checkpoint order."""

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(value)
        self[name] = p
        return p

    def dense(self, name: str, cin: int, cout: int,
              rng: np.random.Generator) -> tuple[Parameter, Parameter]:
        """He-style weights; small random biases keep zero rows off the relu kink."""
        scale = np.sqrt(2.0 / max(cin, 1))
        w = self.add(f"{name}.w", rng.normal(0.0, scale, size=(cin, cout)))
        b = self.add(f"{name}.b", rng.uniform(-0.05, 0.05, size=cout))
        return w, b

    def zero_grad(self) -> None:
        for p in self.values():
            p.zero_grad()

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.value.copy()) for k, p in self.items())

    def load_state(self, arrays: dict) -> None:
        for k, p in self.items():
            arr = np.asarray(arrays[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.value[...] = arr


# --- dense layer and activations ----------------------------------------


def fc(x: np.ndarray, w: Parameter, b: Parameter) -> tuple[np.ndarray, Backward]:
    """y = x W + b over the last axis; any number of leading axes."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"fc shape mismatch: x {x.shape}, W {w.shape}, b {b.shape}")
    check_finite(x, "fc")
    y = x @ w.value + b.value

    def backward(dy: np.ndarray) -> np.ndarray:
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        w.grad += x2.T @ dy2
        b.grad += dy2.sum(axis=0)
        return dy @ w.value.T

    return y, backward


def relu(x: np.ndarray) -> tuple[np.ndarray, Backward]:
    check_finite(x, "relu")
    mask = x > 0
    return np.where(mask, x, 0.0), lambda dy: dy * mask


def sigmoid(x: np.ndarray) -> tuple[np.ndarray, Backward]:
    check_finite(x, "sigmoid")
    y = 0.5 * (1.0 + np.tanh(0.5 * x))
    return y, lambda dy: dy * y * (1.0 - y)


def tanh(x: np.ndarray) -> tuple[np.ndarray, Backward]:
    check_finite(x, "tanh")
    y = np.tanh(x)
    return y, lambda dy: dy * (1.0 - y * y)


def softplus(x: np.ndarray) -> tuple[np.ndarray, Backward]:
    check_finite(x, "softplus")
    y = np.logaddexp(0.0, x)
    return y, lambda dy: dy * 0.5 * (1.0 + np.tanh(0.5 * x))


def chain(backs: list[Backward]) -> Backward:
    """Backward of a sequential composition (``backs`` in forward order)."""

    def backward(dy: np.ndarray) -> np.ndarray:
        for back in reversed(backs):
            dy = back(dy)
        return dy

    return backward


# --- causal graph aggregation ------------------------------------------


def causal_mask(adj: np.ndarray) -> np.ndarray:
    """M[d, s] = 1 iff edge s -> d exists and s < d (rows receive)."""
    a = (np.asarray(adj) != 0).astype(np.float64)
    return np.tril(a.T, -1)


def context_operator(mask: np.ndarray, degree: str = "total") -> np.ndarray:
    """Mask scaled by inverse square-root degree on both sides (degrees clamped to >= 1).

    ``degree="total"`` uses in+out causal degree; ``"in"`` uses in-degree
    only, which keeps row i a function of the in-edges of nodes <= i.
    """
    if degree == "total":
        d = mask.sum(axis=1) + mask.sum(axis=0)
    elif degree == "in":
        d = mask.sum(axis=1)
    else:
        raise ValueError(f"unknown degree mode {degree!r}")
    s = 1.0 / np.sqrt(np.maximum(d, 1.0))
    return s[:, None] * mask * s[None, :]


def gcc_aggregate(x: np.ndarray, adj: np.ndarray, kernel: Parameter,
                  op: np.ndarray | None = None) -> tuple[np.ndarray, Backward]:
    """Causal aggregation ``op @ x @ kernel``; ``op`` defaults to the degree-normalized causal mask."""
    h = context_operator(causal_mask(adj)) if op is None else op
    if x.shape[0] != h.shape[0] or x.shape[1] != kernel.shape[0]:
        raise ValueError(f"gcc shape mismatch: x {x.shape}, op {h.shape}, kernel {kernel.shape}")
    check_finite(x, "gcc_aggregate")
    hx = h @ x
    y = hx @ kernel.value

    def backward(dy: np.ndarray) -> np.ndarray:
        kernel.grad += hx.T @ dy
        return h.T @ (dy @ kernel.value.T)

    return y, backward


def relation_operators(adj: np.ndarray, rel: np.ndarray, num_relations: int,
                       degree: str = "total") -> np.ndarray:
    """Stack of per-relation operators sharing the degree normalization of the full mask.

    ``rel[s, d]`` is the relation id of edge s -> d (ignored where adj is 0).
    """
    mask = causal_mask(adj)
    rel_t = np.asarray(rel).T
    used = rel_t[mask > 0]
    if used.size and (used.min() < 0 or used.max() >= num_relations):
        raise ValueError("relation id out of range in rgcn_aggregate")
    full = context_operator(mask, degree)
    return np.stack([np.where(rel_t == r, full, 0.0) for r in range(num_relations)])


def rgcn_aggregate(x: np.ndarray, adj: np.ndarray, rel: np.ndarray, kernel: Parameter,
                   ops: np.ndarray | None = None) -> tuple[np.ndarray, Backward]:
    """Per-relation causal aggregation summed over relation types; kernel is (R, Cin, Cout)."""
    num_rel = kernel.shape[0]
    hs = relation_operators(adj, rel, num_rel) if ops is None else ops
    check_finite(x, "rgcn_aggregate")
    hx = np.einsum("rij,jc->ric", hs, x)
    y = np.einsum("ric,rco->io", hx, kernel.value)

    def backward(dy: np.ndarray) -> np.ndarray:
        kernel.grad += np.einsum("ric,io->rco", hx, dy)
        return np.einsum("rij,rio->jo", hs, np.einsum("io,rco->ric", dy, kernel.value))

    return y, backward


# --- gradient check and optimizer ---------------------------------------


def grad_check(loss_fn: Callable[[], float], params: Iterable[Parameter], eps: float = 1e-5,
               probes: int = 30, seed: int = 0, kink_tol: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must zero the grads, run forward and backward, and return the
    scalar loss.  ``probes`` random entries are sampled across all params.
    A probe whose one-sided slopes disagree by more than ``kink_tol``
    (relative) straddles a relu kink, where no derivative exists; it is
    redrawn, up to 20 * probes draws in total.  The relative-error
    denominator is floored at the level where roundoff in the loss
    (about eps_mach * |loss| / eps) would alone exceed a 1e-4 relative error.
    """
    params = list(params)
    base = loss_fn()
    if not np.isfinite(base):
        raise NonFiniteError("loss is not finite at the probe point")
    analytic = [p.grad.copy() for p in params]
    floor = max(1e-6, 4.0 * np.finfo(np.float64).eps * max(abs(base), 1.0) / eps / 1e-4)
    sizes = np.array([p.value.size for p in params], dtype=np.float64)
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = draws = 0
    while done < probes and draws < 20 * probes:
        draws += 1
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        idx = int(rng.integers(params[k].value.size))
        flat = params[k].value.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        up = loss_fn()
        flat[idx] = orig - eps
        down = loss_fn()
        flat[idx] = orig
        fwd, bwd = (up - base) / eps, (base - down) / eps
        if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), 1e-3):
            continue
        num = (up - down) / (2 * eps)
        ana = analytic[k].reshape(-1)[idx]
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
        done += 1
    if done < probes:
        raise RuntimeError(f"only {done} of {probes} probes landed on smooth points")
    loss_fn()
    return worst


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    for p in params:
        if p.grad.shape != p.value.shape:
            raise ValueError("gradient shape mismatch")
        p.t += 1
        p.m = beta1 * p.m + (1 - beta1) * p.grad
        p.v = beta2 * p.v + (1 - beta2) * p.grad * p.grad
        m_hat = p.m / (1 - beta1 ** p.t)
        v_hat = p.v / (1 - beta2 ** p.t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
