"""Extract the 8-layer VGG-16 prefix from a checkpoint and write NPW1.

The prefix is fixed: conv, conv, pool, conv, conv, pool, conv, conv
with output channels 64, 64, 64, 128, 128, 128, 256, 256.  Checkpoints
follow the common ``features.N.weight`` / ``features.N.bias`` naming
(torch ``state_dict`` files, or ``.npz`` archives with the same keys).
Convolution tensors must already be [out][in][kh][kw]; they are written
to NPW1 as little-endian float32 without any numeric conversion, so the
round trip is bit-exact.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NPW1"
VERSION = 1
KIND_CONV = 0
KIND_POOL = 1

# (checkpoint features index or None for pooling, in_channels, out_channels)
VGG16_PREFIX = (
    (0, 3, 64),
    (2, 64, 64),
    (None, 64, 64),
    (5, 64, 128),
    (7, 128, 128),
    (None, 128, 128),
    (10, 128, 256),
    (12, 256, 256),
)


class ExportError(Exception):
    """Base class for conversion failures."""


class MissingLayerError(ExportError):
    """Checkpoint lacks a tensor the prefix needs."""


class KernelSizeError(ExportError):
    """Convolution kernel is not the expected 3x3."""


class ChannelMismatchError(ExportError):
    """Tensor shape disagrees with the fixed prefix channel plan."""


@dataclass(frozen=True)
class ExportManifest:
    checkpoint: str
    out: str
    layers: tuple[int, ...] = tuple(range(1, 9))


@dataclass(frozen=True)
class ExportReport:
    manifest: ExportManifest
    checksums: dict[str, int] = field(default_factory=dict)  # tensor name -> crc32

    def lines(self) -> list[str]:
        return [f"{name} crc32={crc:08x}" for name, crc in self.checksums.items()]


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint into name -> float32 array.

    ``.npz`` archives are read directly; anything else goes through
    ``torch.load`` (weights only) and is converted tensor by tensor.
    """
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return {k: np.asarray(data[k], dtype=np.float32) for k in data.files}
    try:
        import torch
    except ImportError as exc:
        raise ExportError(
            f"reading {path.name} needs torch; install it or supply a .npz checkpoint"
        ) from exc
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ExportError(f"cannot read {path.name} as a tensor-only checkpoint: {exc}") from exc
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    if not isinstance(state, dict):
        raise ExportError(f"{path.name} does not contain a state dict")
    out = {}
    for key, value in state.items():
        out[key] = value.detach().cpu().numpy().astype(np.float32, copy=False)
    return out


def _tensor(state: dict[str, np.ndarray], name: str) -> np.ndarray:
    if name not in state:
        raise MissingLayerError(f"checkpoint has no tensor {name!r}")
    return np.ascontiguousarray(state[name], dtype=np.float32)


def export(manifest: ExportManifest) -> ExportReport:
    """Write the NPW1 file and return per-tensor checksums."""
    if manifest.layers != tuple(range(1, 9)):
        raise ExportError("only the fixed 8-layer prefix is exported")
    state = load_checkpoint(manifest.checkpoint)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(VGG16_PREFIX))
    checksums: dict[str, int] = {}
    for feat, cin, cout in VGG16_PREFIX:
        if feat is None:
            blob += struct.pack("<BIIIII", KIND_POOL, cin, cout, 2, 2, 2)
            continue
        wname, bname = f"features.{feat}.weight", f"features.{feat}.bias"
        weight = _tensor(state, wname)
        bias = _tensor(state, bname)
        if weight.ndim != 4 or weight.shape[2:] != (3, 3):
            raise KernelSizeError(
                f"{wname}: expected [out][in][3][3], got {weight.shape}"
            )
        if weight.shape[:2] != (cout, cin) or bias.shape != (cout,):
            raise ChannelMismatchError(
                f"{wname}: expected {cout}x{cin} channels, got "
                f"{weight.shape[0]}x{weight.shape[1]} (bias {bias.shape})"
            )
        wbytes = weight.astype("<f4").tobytes()
        bbytes = bias.astype("<f4").tobytes()
        blob += struct.pack("<BIIIII", KIND_CONV, cin, cout, 3, 3, 1)
        blob += wbytes
        blob += bbytes
        checksums[wname] = zlib.crc32(wbytes)
        checksums[bname] = zlib.crc32(bbytes)
    Path(manifest.out).write_bytes(bytes(blob))
    return ExportReport(manifest=manifest, checksums=checksums)
