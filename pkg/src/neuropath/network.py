"""Declarative layer graph and the deterministic forward pass.

A network is a flat list of layers, indexed 1..L.  Two kinds exist:

* ``conv_relu``: stride-1 convolution with odd kernel, replicate
  ("same as boundary") padding, followed by ReLU.  Both the pre-ReLU
  and post-ReLU responses are kept; the correlation baseline needs the
  former, path aggregation the latter.
* ``maxpool``: non-overlapping max pooling with kernel == stride.  The
  argmax choice of every window is recorded, because path aggregation
  gates pooling arcs on those choices.

Weights travel in the NPW1 container (see ``load_weights``), a plain
little-endian dump with no alignment padding:

    magic "NPW1" | u32 version=1 | u32 layer_count
    per layer: u8 kind (0=conv_relu, 1=maxpool)
               u32 in_channels | u32 out_channels | u32 kh | u32 kw | u32 stride
               conv only: f32 weights [out][in][kh][kw], f32 bias [out]
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ChannelChainError,
    FormatError,
    LayerRangeError,
    ShapeError,
    TruncatedStreamError,
    UnsupportedConfigError,
    VersionError,
)
from .grids import Grid, SubsampleChain

CONV = "conv_relu"
POOL = "maxpool"

_KIND_CODES = {CONV: 0, POOL: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]  # (kh, kw) = (rows, columns)
    stride: int
    weights: np.ndarray | None = None  # conv: (out, in, kh, kw) float32
    bias: np.ndarray | None = None  # conv: (out,) float32

    def __post_init__(self):
        kh, kw = self.kernel
        if self.kind == CONV:
            if self.stride != 1:
                raise UnsupportedConfigError("convolutions must have stride 1")
            if kh % 2 == 0 or kw % 2 == 0:
                raise UnsupportedConfigError("convolution kernels must be odd-sized")
            if self.weights is None or self.bias is None:
                raise ShapeError("convolution layer needs weights and bias")
            w = np.asarray(self.weights, dtype=np.float32)
            b = np.asarray(self.bias, dtype=np.float32)
            if w.shape != (self.out_channels, self.in_channels, kh, kw):
                raise ShapeError(
                    f"conv weights shape {w.shape} != "
                    f"{(self.out_channels, self.in_channels, kh, kw)}"
                )
            if b.shape != (self.out_channels,):
                raise ShapeError(f"conv bias shape {b.shape} != ({self.out_channels},)")
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "bias", b)
        elif self.kind == POOL:
            if (kh, kw) != (self.stride, self.stride):
                raise UnsupportedConfigError(
                    "pooling kernel must equal its stride (non-overlapping windows)"
                )
            if self.in_channels != self.out_channels:
                raise ChannelChainError("pooling cannot change the channel count")
            if self.weights is not None or self.bias is not None:
                raise ShapeError("pooling layers carry no weights")
        else:
            raise FormatError(f"unknown layer kind {self.kind!r}")

    @property
    def q(self) -> int:
        """Spatial subsampling factor of this layer."""
        return self.stride if self.kind == POOL else 1


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Ordered layers, 1-based indexing to match the usual summaries."""

    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise FormatError("network must have at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ChannelChainError(
                    f"layer outputs {prev.out_channels} channels but the next "
                    f"expects {nxt.in_channels}"
                )

    def __len__(self) -> int:
        return len(self.layers)

    def layer(self, index: int) -> LayerSpec:
        if not 1 <= index <= len(self.layers):
            raise LayerRangeError(f"layer index {index} outside 1..{len(self.layers)}")
        return self.layers[index - 1]

    def structure(self) -> tuple:
        """Hashable summary (kinds, channels, kernels, strides); two
        stacks are compatible when their networks share this."""
        return tuple(
            (l.kind, l.in_channels, l.out_channels, l.kernel, l.stride)
            for l in self.layers
        )

    def subsample_chain(self) -> SubsampleChain:
        return SubsampleChain(tuple(l.q for l in self.layers))

    def total_stride(self, upto: int | None = None) -> int:
        return self.subsample_chain().total(upto)

    def receptive_radius(self, upto: int | None = None) -> tuple[int, int]:
        """Half-extent (rx, ry) of the input region feeding one layer-
        ``upto`` activation; used to size interior margins in tests."""
        end = len(self.layers) if upto is None else upto
        rx = ry = 0
        scale = 1
        for layer in self.layers[:end]:
            if layer.kind == CONV:
                rx += (layer.kernel[1] // 2) * scale
                ry += (layer.kernel[0] // 2) * scale
            else:
                rx += (layer.stride - 1) * scale
                ry += (layer.stride - 1) * scale
                scale *= layer.stride
        return rx, ry


@dataclass(frozen=True, eq=False)
class LayerActivation:
    """One layer's outputs for one image."""

    post: np.ndarray  # (W, H, C) float32; post-ReLU / pooled values
    pre: np.ndarray | None = None  # conv only: pre-ReLU responses
    argmax: np.ndarray | None = None  # pool only: window-scan index, int16
    is_argmax: np.ndarray | None = None  # pool only: input-resolution bool


@dataclass(frozen=True, eq=False)
class ActivationStack:
    """Per-layer activations of one image, plus the as-fed input at
    index 0.  All arrays are immutable; sharing across threads is safe."""

    net: NetworkSpec
    input: np.ndarray  # (W, H, C) float32, after any channel replication
    layers: tuple[LayerActivation, ...]
    range: tuple[int, int]

    def volume(self, index: int) -> np.ndarray:
        """Activation grid of layer ``index``; 0 is the input."""
        if index == 0:
            return self.input
        return self.layers[index - 1].post


@dataclass(frozen=True)
class VirtualLayer:
    """Single-channel origin grid sitting below a layer range.

    One node per spatial position of layer s's input, fanning out
    through per-pixel arcs to all channels of that position; the node's
    own matching value is the odot identity, so it contributes topology
    only.  Aggregation results are indexed by this grid.
    """

    width: int
    height: int
    fanout: int  # channels of the volume the virtual nodes feed


def attach_virtual_layer(stack: ActivationStack, start_layer: int) -> VirtualLayer:
    """Describe the virtual origin grid for aggregation starting at
    ``start_layer``."""
    if not 1 <= start_layer <= len(stack.layers):
        raise LayerRangeError(
            f"start layer {start_layer} outside the stack's 1..{len(stack.layers)}"
        )
    base = stack.volume(start_layer - 1)
    return VirtualLayer(width=base.shape[0], height=base.shape[1], fanout=base.shape[2])


def _conv_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    kh, kw = layer.kernel
    rx, ry = kw // 2, kh // 2
    padded = np.pad(x, ((rx, rx), (ry, ry), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (kw, kh), axis=(0, 1))
    # win[x, y, c, a, b]: a runs over kernel columns, b over kernel rows;
    # weights are stored (out, in, rows, cols).
    pre = np.einsum("xycab,ocba->xyo", win, layer.weights, optimize=True)
    pre += layer.bias
    return pre.astype(np.float32)


def _pool_forward(x: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w, h, c = x.shape
    if w % q or h % q:
        raise ShapeError(
            f"extent {w}x{h} not divisible by pooling stride {q}; crop the input first"
        )
    # Window axis flattened in raster order (row dy outer, column dx
    # inner) so argmax ties resolve to the first scan position.
    view = x.reshape(w // q, q, h // q, q, c).transpose(0, 2, 3, 1, 4)
    flat = view.reshape(w // q, h // q, q * q, c)
    idx = np.argmax(flat, axis=2).astype(np.int16)
    out = np.take_along_axis(flat, idx[:, :, None, :].astype(np.intp), axis=2)[:, :, 0, :]
    dy, dx = np.divmod(idx.astype(np.intp), q)
    gx = np.arange(w // q)[:, None, None] * q + dx
    gy = np.arange(h // q)[None, :, None] * q + dy
    gc = np.broadcast_to(np.arange(c)[None, None, :], idx.shape)
    is_argmax = np.zeros((w, h, c), dtype=bool)
    is_argmax[gx, gy, gc] = True
    return out, idx, is_argmax


def forward(
    net: NetworkSpec, image: Grid, start_layer: int = 1, end_layer: int | None = None
) -> ActivationStack:
    """Run layers 1..end_layer on one image.

    A single-channel image feeding a multi-channel first layer is
    replicated across channels (pretrained color networks are fed
    grayscale this way).  Raises ShapeError when a pooling layer would
    see a partial window.
    """
    t = len(net) if end_layer is None else end_layer
    if not (1 <= start_layer <= t <= len(net)):
        raise LayerRangeError(
            f"layer range {start_layer}..{t} outside the network's 1..{len(net)}"
        )
    x = image.data
    want = net.layer(1).in_channels
    if x.shape[2] == 1 and want > 1:
        x = np.repeat(x, want, axis=2)
    if x.shape[2] != want:
        raise ShapeError(
            f"image has {x.shape[2]} channels, layer 1 expects {want}"
        )
    x = np.ascontiguousarray(x)
    acts: list[LayerActivation] = []
    cur = x
    for layer in net.layers[:t]:
        if layer.kind == CONV:
            pre = _conv_forward(cur, layer)
            post = np.maximum(pre, 0.0)
            acts.append(LayerActivation(post=post, pre=pre))
        else:
            post, idx, is_arg = _pool_forward(cur, layer.stride)
            acts.append(LayerActivation(post=post, argmax=idx, is_argmax=is_arg))
        cur = acts[-1].post
    for a in acts:
        a.post.setflags(write=False)
    x.setflags(write=False)
    return ActivationStack(net=net, input=x, layers=tuple(acts), range=(start_layer, t))


# ----------------------------------------------------------------------
# NPW1 serialization
# ----------------------------------------------------------------------

_MAGIC = b"NPW1"
_VERSION = 1


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedStreamError(f"needed {n} bytes, got {len(buf)}")
    return buf


def load_weights(source) -> NetworkSpec:
    """Read a NPW1 stream (file path, bytes, or binary file object)."""
    if isinstance(source, (bytes, bytearray)):
        fh = io.BytesIO(source)
    elif hasattr(source, "read"):
        fh = source
    else:
        fh = open(source, "rb")
    try:
        magic = _read_exact(fh, 4)
        if magic != _MAGIC:
            raise BadMagicError(f"expected {_MAGIC!r}, got {magic!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != _VERSION:
            raise VersionError(f"unsupported NPW1 version {version}")
        layers = []
        for _ in range(count):
            (kind_code,) = struct.unpack("<B", _read_exact(fh, 1))
            if kind_code not in _KIND_NAMES:
                raise FormatError(f"unknown layer kind code {kind_code}")
            cin, cout, kh, kw, stride = struct.unpack("<IIIII", _read_exact(fh, 20))
            weights = bias = None
            if _KIND_NAMES[kind_code] == CONV:
                n = cout * cin * kh * kw
                weights = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").reshape(
                    cout, cin, kh, kw
                )
                bias = np.frombuffer(_read_exact(fh, 4 * cout), dtype="<f4")
            layers.append(
                LayerSpec(
                    kind=_KIND_NAMES[kind_code],
                    in_channels=cin,
                    out_channels=cout,
                    kernel=(kh, kw),
                    stride=stride,
                    weights=weights,
                    bias=bias,
                )
            )
        return NetworkSpec(tuple(layers))
    finally:
        if fh is not source and not isinstance(source, (bytes, bytearray)):
            fh.close()


def save_weights(net: NetworkSpec) -> bytes:
    """Serialize a network to NPW1 bytes (inverse of load_weights)."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<II", _VERSION, len(net))
    for layer in net.layers:
        out += struct.pack("<B", _KIND_CODES[layer.kind])
        kh, kw = layer.kernel
        out += struct.pack(
            "<IIIII", layer.in_channels, layer.out_channels, kh, kw, layer.stride
        )
        if layer.kind == CONV:
            out += layer.weights.astype("<f4").tobytes()
            out += layer.bias.astype("<f4").tobytes()
    return bytes(out)
