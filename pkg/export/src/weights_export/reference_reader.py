"""Minimal standalone NPW1 reader used to verify exports.

Deliberately independent of any other NPW1 code: the round-trip test
should not trust the writer's own bookkeeping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ReadLayer:
    kind: int  # 0 conv, 1 pool
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int
    weights: np.ndarray | None
    bias: np.ndarray | None


def read_npw1(buf: bytes) -> list[ReadLayer]:
    if buf[:4] != b"NPW1":
        raise ValueError(f"bad magic {buf[:4]!r}")
    version, count = struct.unpack("<II", buf[4:12])
    if version != 1:
        raise ValueError(f"unsupported version {version}")
    layers = []
    off = 12
    for _ in range(count):
        kind, cin, cout, kh, kw, stride = struct.unpack("<BIIIII", buf[off : off + 21])
        off += 21
        weights = bias = None
        if kind == 0:
            n = cout * cin * kh * kw
            weights = np.frombuffer(buf[off : off + 4 * n], dtype="<f4").reshape(
                cout, cin, kh, kw
            )
            off += 4 * n
            bias = np.frombuffer(buf[off : off + 4 * cout], dtype="<f4")
            off += 4 * cout
        layers.append(ReadLayer(kind, cin, cout, (kh, kw), stride, weights, bias))
    if off != len(buf):
        raise ValueError(f"{len(buf) - off} trailing bytes after {count} layers")
    return layers
