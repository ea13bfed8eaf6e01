"""Byte-wise rANS over DiscretePMF tables, and the SGZ1 container.

The encoder starts from state 0 instead of the usual lower bound L, so a
short stream pays only for the bytes its final state actually needs.  While
the state is below L nothing is emitted, except possibly at the very first
renormalization, and after any emission the state is >= L for good.  The
decoder therefore reads while ``x < L`` and bytes remain; at the end the
state must be back at 0 with every byte consumed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .entropy_model import PRECISION, TOTAL, DiscretePMF

__all__ = [
    "CodecError",
    "RansEncoder",
    "RansDecoder",
    "rans_encode",
    "rans_decode",
    "ideal_bits",
    "STREAMS",
    "ORDERS",
    "Bitstream",
    "frame",
    "deframe",
]

RANS_L = 1 << 23
MAGIC = b"SGZ1"
VERSION = 1
STREAMS = ("prior", "structure", "node_loc", "node_type", "rel_type", "rel_weight")
ORDERS = ("edge-first", "node-first", "parallel")
_HEADER = struct.Struct("<4sBBIIHH6I")


class CodecError(ValueError):
    """Corrupt, truncated or mismatched compressed data."""


class RansEncoder:
    """Collects (symbol, pmf) pairs in decode order; ``finish`` encodes them in reverse."""

    def __init__(self):
        self._items: list[tuple[int, DiscretePMF]] = []

    def __len__(self) -> int:
        return len(self._items)

    def push(self, symbol: int, pmf: DiscretePMF) -> None:
        if not pmf.lo <= symbol <= pmf.hi:
            raise ValueError(f"symbol {symbol} outside PMF range [{pmf.lo}, {pmf.hi}]")
        self._items.append((int(symbol), pmf))

    def ideal_bits(self) -> float:
        return sum(pmf.bits(s) for s, pmf in self._items)

    def finish(self) -> bytes:
        x = 0
        out = bytearray()
        for symbol, pmf in reversed(self._items):
            k = symbol - pmf.lo
            f = int(pmf.freqs[k])
            c = int(pmf.cum[k])
            x_max = ((RANS_L >> PRECISION) << 8) * f
            while x >= x_max:
                out.append(x & 0xFF)
                x >>= 8
            x = ((x // f) << PRECISION) + (x % f) + c
        head = x.to_bytes((x.bit_length() + 7) // 8, "big")
        out.reverse()
        return head + bytes(out)


class RansDecoder:
    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0
        self._x = 0
        self._refill()
        if self._x >= RANS_L << 8:
            raise CodecError("rANS state out of bounds (corrupt stream)")

    def _refill(self) -> None:
        data, pos, x = self._data, self._pos, self._x
        while x < RANS_L and pos < len(data):
            x = (x << 8) | data[pos]
            pos += 1
        self._pos, self._x = pos, x

    @property
    def position(self) -> int:
        return self._pos

    def pop(self, pmf: DiscretePMF) -> int:
        slot = self._x & (TOTAL - 1)
        k = int(np.searchsorted(pmf.cum, slot, side="right")) - 1
        f = int(pmf.freqs[k])
        self._x = f * (self._x >> PRECISION) + slot - int(pmf.cum[k])
        self._refill()
        return pmf.lo + k

    def finish(self) -> None:
        if self._pos != len(self._data) or self._x != 0:
            raise CodecError(f"rANS stream did not terminate cleanly at byte {self._pos} "
                             f"of {len(self._data)} (truncated or corrupt)")


def rans_encode(items: Iterable[tuple[int, DiscretePMF]]) -> bytes:
    enc = RansEncoder()
    for symbol, pmf in items:
        enc.push(symbol, pmf)
    return enc.finish()


def rans_decode(data: bytes, pmfs: Iterable[DiscretePMF]) -> list[int]:
    dec = RansDecoder(data)
    out = [dec.pop(pmf) for pmf in pmfs]
    dec.finish()
    return out


def ideal_bits(items: Iterable[tuple[int, DiscretePMF]]) -> float:
    return sum(pmf.bits(s) for s, pmf in items)


# --- container ----------------------------------------------------------


@dataclass
class Bitstream:
    num_nodes: int
    num_edges: int
    image_size: tuple[int, int]
    directed: bool = True
    order: str = "edge-first"
    weights: bool = False
    keep_order: bool = False
    streams: dict[str, bytes] = field(default_factory=dict)
    permutation: bytes = b""

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.streams = {k: bytes(v) for k, v in self.streams.items() if v}

    def stream(self, name: str) -> bytes:
        return self.streams.get(name, b"")

    def stream_order(self) -> tuple[str, ...]:
        if self.order == "edge-first":
            return ("prior", "structure", "rel_type", "rel_weight", "node_type", "node_loc")
        return ("prior", "structure", "node_type", "node_loc", "rel_type", "rel_weight")

    def header_bits(self) -> int:
        return 8 * _HEADER.size


def frame(bs: Bitstream) -> bytes:
    if bs.order not in ORDERS:
        raise ValueError(f"unknown order {bs.order!r}")
    unknown = set(bs.streams) - set(STREAMS)
    if unknown:
        raise ValueError(f"unknown streams {sorted(unknown)}")
    flags = (int(bs.directed) | ORDERS.index(bs.order) << 1 | int(bs.weights) << 3
             | int(bs.keep_order) << 4)
    width, height = bs.image_size
    lengths = [len(bs.stream(name)) for name in STREAMS]
    head = _HEADER.pack(MAGIC, VERSION, flags, bs.num_nodes, bs.num_edges, width, height, *lengths)
    body = b"".join(bs.stream(name) for name in bs.stream_order())
    return head + body + (bs.permutation if bs.keep_order else b"")


def deframe(data: bytes) -> Bitstream:
    if len(data) < 4 or data[:4] != MAGIC:
        raise CodecError("not an SGZ1 stream")
    if len(data) < _HEADER.size:
        raise CodecError(f"truncated header: {len(data)} of {_HEADER.size} bytes")
    magic, version, flags, n, e, width, height, *lengths = _HEADER.unpack_from(data)
    if version != VERSION:
        raise CodecError(f"unsupported SGZ1 version {version}")
    order_id = (flags >> 1) & 3
    if order_id >= len(ORDERS) or flags >> 5:
        raise CodecError(f"invalid flags byte {flags:#04x}")
    bs = Bitstream(n, e, (width, height), bool(flags & 1), ORDERS[order_id],
                   bool(flags >> 3 & 1), bool(flags >> 4 & 1))
    sizes = dict(zip(STREAMS, lengths))
    pos = _HEADER.size
    for name in bs.stream_order():
        end = pos + sizes[name]
        if end > len(data):
            raise CodecError(f"stream {name!r} truncated at byte {len(data)} (needs {end})")
        if sizes[name]:
            bs.streams[name] = data[pos:end]
        pos = end
    if bs.keep_order:
        bs.permutation = data[pos:]
    elif pos != len(data):
        raise CodecError(f"{len(data) - pos} trailing bytes after last stream")
    return bs
